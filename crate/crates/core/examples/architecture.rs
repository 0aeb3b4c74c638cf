//! Prints the shape ladder and operation counts of the default model at
//! 256x256 without evaluating it.

use fmamba::network::{count_flops, format_audit, param_specs, shape_audit};
use fmamba::ModelConfig;

fn main() -> fmamba::Result<()> {
    let cfg = ModelConfig::default();
    let audit = shape_audit(&cfg, 256, 256)?;
    let stages: Vec<_> = audit
        .iter()
        .filter(|e| !e.label.contains(".dvss") && !e.label.ends_with(".merge"))
        .cloned()
        .collect();
    print!("{}", format_audit(&stages));

    let params: usize = param_specs(&cfg)?
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    println!("\nparameters: {params}");
    println!("{}", count_flops(&cfg, 256, 256)?);
    Ok(())
}
