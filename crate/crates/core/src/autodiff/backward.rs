//! Reverse sweep over a recorded tape.

use std::collections::BTreeMap;

use super::{Op, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::conv;
use crate::numerics::{dense, patch};
use crate::ssm::kernel::{self as scan, ScanInputs};
use crate::tensor::Tensor;

/// Gradient accumulator indexed by node.
struct Adjoints {
    slots: Vec<Option<Vec<f64>>>,
    factor: f64,
}

impl Adjoints {
    fn add(&mut self, v: &Var, contribution: Vec<f64>) {
        let Some(id) = v.node else { return };
        match &mut self.slots[id] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(&contribution) {
                    *a += c * self.factor;
                }
            }
            slot @ None => {
                let mut c = contribution;
                if self.factor != 1.0 {
                    c.iter_mut().for_each(|x| *x *= self.factor);
                }
                *slot = Some(c);
            }
        }
    }

    fn add_opt(&mut self, v: Option<&Var>, f: impl FnOnce() -> Vec<f64>) {
        if let Some(v) = v.filter(|v| v.is_tracked()) {
            self.add(v, f());
        }
    }

    fn add_if(&mut self, v: &Var, f: impl FnOnce() -> Vec<f64>) {
        if v.is_tracked() {
            self.add(v, f());
        }
    }
}

impl Tape {
    /// Gradient of the scalar `output` with respect to every recorded node.
    fn sweep(&self, output: &Var) -> Result<Vec<Option<Vec<f64>>>> {
        if output.value().len() != 1 {
            return Err(Error::NonScalarOutput(output.shape().to_vec()));
        }
        let Some(root) = output.node else {
            return Err(Error::Unrecorded);
        };
        let nodes = self.nodes.borrow();
        let mut adj = Adjoints {
            slots: vec![None; nodes.len()],
            factor: 1.0,
        };
        adj.slots[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = adj.slots[id].take() else {
                continue;
            };
            let node = &nodes[id];
            debug_assert_eq!(g.len(), node.len);
            adj.factor = if self.fault == Some(node.op.kind()) && node.op.kind() != OpKind::Leaf {
                1.5
            } else {
                1.0
            };
            propagate(&node.op, &g, &mut adj);
            if matches!(node.op, Op::Leaf) {
                adj.slots[id] = Some(g);
            }
        }
        Ok(adj.slots)
    }

    /// Gradients of `output` for every parameter requested on this tape,
    /// keyed by name. Parameters that do not influence `output` get zeros.
    pub fn gradients(&self, output: &Var) -> Result<BTreeMap<String, Tensor>> {
        let mut slots = self.sweep(output)?;
        let leaves = self.leaves.borrow();
        let mut out = BTreeMap::new();
        for (name, var) in leaves.iter() {
            let data = var
                .node
                .and_then(|id| slots[id].take())
                .unwrap_or_else(|| vec![0.0; var.value().len()]);
            out.insert(name.clone(), Tensor::new(var.shape(), data)?);
        }
        Ok(out)
    }
}

fn elementwise(a: &[f64], g: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(g).map(|(&x, &gv)| f(x, gv)).collect()
}

fn propagate(op: &Op, g: &[f64], adj: &mut Adjoints) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            adj.add_if(a, || g.to_vec());
            adj.add_if(b, || g.to_vec());
        }
        Op::Sub(a, b) => {
            adj.add_if(a, || g.to_vec());
            adj.add_if(b, || g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            adj.add_if(a, || elementwise(b.value().data(), g, |y, gv| y * gv));
            adj.add_if(b, || elementwise(a.value().data(), g, |x, gv| x * gv));
        }
        Op::Div(a, b) => {
            adj.add_if(a, || elementwise(b.value().data(), g, |y, gv| gv / y));
            adj.add_if(b, || {
                a.value()
                    .data()
                    .iter()
                    .zip(b.value().data())
                    .zip(g)
                    .map(|((&x, &y), &gv)| -gv * x / (y * y))
                    .collect()
            });
        }
        Op::Scale(x, s) => adj.add_if(x, || g.iter().map(|v| v * s).collect()),
        Op::Offset(x) | Op::Reshape(x) => adj.add_if(x, || g.to_vec()),
        Op::Exp(x) => adj.add_if(x, || elementwise(x.value().data(), g, |v, gv| gv * v.exp())),
        Op::Abs(x) => adj.add_if(x, || {
            elementwise(x.value().data(), g, |v, gv| if v >= 0.0 { gv } else { -gv })
        }),
        Op::Max(a, b) => {
            let pick = |first: bool| -> Vec<f64> {
                a.value()
                    .data()
                    .iter()
                    .zip(b.value().data())
                    .zip(g)
                    .map(|((&x, &y), &gv)| if (x >= y) == first { gv } else { 0.0 })
                    .collect()
            };
            adj.add_if(a, || pick(true));
            adj.add_if(b, || pick(false));
        }
        Op::Act(x, kind) => adj.add_if(x, || {
            elementwise(x.value().data(), g, |v, gv| gv * kind.derivative(v))
        }),
        Op::Sum(x) => adj.add_if(x, || vec![g[0]; x.value().len()]),
        Op::Mean(x) => adj.add_if(x, || vec![g[0] / x.value().len() as f64; x.value().len()]),
        Op::Conv2d { x, w, b, geom } => {
            adj.add_if(x, || conv::conv2d_backward_input(w.value().data(), g, geom));
            adj.add_if(w, || {
                conv::conv2d_backward_weight(x.value().data(), g, geom)
            });
            adj.add_opt(b.as_ref(), || conv::channel_sums(g, geom.cout));
        }
        Op::Depthwise { x, w, b, geom } => {
            adj.add_if(x, || {
                conv::depthwise_backward_input(w.value().data(), g, geom)
            });
            adj.add_if(w, || {
                conv::depthwise_backward_weight(x.value().data(), g, geom)
            });
            adj.add_opt(b.as_ref(), || conv::channel_sums(g, geom.cin));
        }
        Op::Linear { x, w, b } => {
            let (cin, cout) = (w.shape()[0], w.shape()[1]);
            adj.add_if(x, || {
                dense::linear_backward_input(w.value().data(), g, cin, cout)
            });
            adj.add_if(w, || {
                dense::linear_backward_weight(x.value().data(), g, cin, cout)
            });
            adj.add_opt(b.as_ref(), || conv::channel_sums(g, cout));
        }
        Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            inv,
        } => {
            let c = gain.value().len();
            adj.add_if(x, || {
                dense::layer_norm_backward_input(g, xhat, inv, gain.value().data())
            });
            adj.add_if(gain, || {
                let mut d = vec![0.0; c];
                for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for k in 0..c {
                        d[k] += gr[k] * xr[k];
                    }
                }
                d
            });
            adj.add_if(shift, || conv::channel_sums(g, c));
        }
        Op::Gap(x) => adj.add_if(x, || {
            let c = g.len();
            let n = x.value().len() / c;
            let mut d = Vec::with_capacity(x.value().len());
            for _ in 0..n {
                d.extend(g.iter().map(|v| v / n as f64));
            }
            d
        }),
        Op::ChannelScale(x, s) => {
            adj.add_if(x, || dense::channel_scale(g, s.value().data()));
            adj.add_if(s, || {
                let c = s.value().len();
                let mut d = vec![0.0; c];
                for (gr, xr) in g.chunks_exact(c).zip(x.value().data().chunks_exact(c)) {
                    for k in 0..c {
                        d[k] += gr[k] * xr[k];
                    }
                }
                d
            });
        }
        Op::ChannelConv1d(v, w) => {
            let (dv, dw) = dense::channel_conv1d_backward(v.value().data(), w.value().data(), g);
            adj.add_if(v, || dv);
            adj.add_if(w, || dw);
        }
        Op::LdcMask { eps, m } => {
            let e = eps.value().data()[0];
            adj.add_if(m, || g.iter().map(|gv| gv * e).collect());
            adj.add_if(eps, || {
                let s = m
                    .value()
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(mv, gv)| gv * (mv - 1.0))
                    .sum();
                vec![s]
            });
        }
        Op::Sobel(x, axis) => adj.add_if(x, || {
            let (h, w) = (x.shape()[0], x.shape()[1]);
            conv::sobel_backward(g, h, w, *axis)
        }),
        Op::SpaceToDepth(x, p) => adj.add_if(x, || {
            let (h, w, c) = x.value().hwc().expect("validated in forward");
            patch::depth_to_space(g, (h / p, w / p, c * p * p), *p)
        }),
        Op::DepthToSpace(x, p) => adj.add_if(x, || {
            let (h, w, c) = x.value().hwc().expect("validated in forward");
            patch::space_to_depth(g, (h * p, w * p, c / (p * p)), *p)
        }),
        Op::Gather(x, index) => adj.add_if(x, || {
            let c = x.value().channels();
            let mut d = vec![0.0; x.value().len()];
            for (q, &i) in index.iter().enumerate() {
                for k in 0..c {
                    d[i * c + k] += g[q * c + k];
                }
            }
            d
        }),
        Op::Scan(s) => {
            let inp = ScanInputs {
                x: s.x.value().data(),
                delta: s.delta.value().data(),
                a: s.a.value().data(),
                b: s.b.value().data(),
                c: s.c.value().data(),
                d: s.d.value().data(),
            };
            let grads = scan::selective_scan_backward(&inp, s.dims, &s.starts, g);
            adj.add_if(&s.x, || grads.x);
            adj.add_if(&s.delta, || grads.delta);
            adj.add_if(&s.a, || grads.a);
            adj.add_if(&s.b, || grads.b);
            adj.add_if(&s.c, || grads.c);
            adj.add_if(&s.d, || grads.d);
        }
    }
}
