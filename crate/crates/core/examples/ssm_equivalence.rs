//! Discretizes a small diagonal system, evaluates it as a recurrence and as
//! a causal convolution, and shows the 2-D skip-scan partition.

use fmamba::ssm::kernel::zoh;
use fmamba::ssm::{
    es2d_partition, es2d_scatter, ssm_apply_conv_form, ssm_kernel, ssm_scan_recurrent,
    zoh_discretize, ScanLayout,
};
use fmamba::Tensor;

fn main() -> fmamba::Result<()> {
    let (a_bar, b_bar) = zoh(0.1, -1.0, 2.0);
    println!("zoh(delta=0.1, a=-1, b=2): a_bar = {a_bar:.10}, b_bar = {b_bar:.10}");

    let (l, n) = (16, 3);
    let a = Tensor::new(&[1, n], vec![-0.5, -1.0, -2.0])?;
    let b = Tensor::from_fn(&[l, n], |i| [1.0, -0.5, 0.25][i % n]);
    let c = [0.3, 1.0, -0.7];
    let disc = zoh_discretize(&a, &Tensor::full(&[l, 1], 0.2), &b)?;
    let x = Tensor::from_fn(&[l, 1], |t| (t as f64 * 0.7).sin());

    let y_rnn = ssm_scan_recurrent(&disc, &Tensor::from_fn(&[l, n], |i| c[i % n]), &Tensor::new(&[1], vec![0.1])?, &x)?;
    let k = ssm_kernel(&disc, 0, &c, l)?;
    let y_conv = ssm_apply_conv_form(&x.reshape(&[l])?, &k, 0.1)?;
    println!("kernel K_bar[0..4] = {:?}", &k.data()[..4]);
    println!("max |recurrent - convolutional| = {:.2e}", y_rnn.max_abs_diff(&y_conv.reshape(&[l, 1])?));

    let layout = ScanLayout::even(4, 6)?;
    let grid = Tensor::from_fn(&[4, 6, 1], |i| i as f64);
    let parts = es2d_partition(&grid, &layout)?;
    for (k, p) in parts.iter().enumerate() {
        println!("sequence {k}: {:?}", p.data());
    }
    println!("scatter restores grid: {}", es2d_scatter(&parts, &layout)? == grid);
    Ok(())
}
