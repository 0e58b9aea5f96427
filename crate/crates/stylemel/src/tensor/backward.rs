//! The reverse sweep: one visit per node, newest to oldest.

use super::kernels;
use super::{Node, NodeId, Op, TapeInner};

/// Add `contribution` into the in-flight gradient of `id`, skipping nodes
/// that no differentiable leaf feeds into.
fn acc(nodes: &[Node], flowing: &mut [Option<Vec<f64>>], id: NodeId, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut flowing[id] {
        Some(buf) => {
            for (b, c) in buf.iter_mut().zip(&contribution) {
                *b += c;
            }
        }
        None => flowing[id] = Some(contribution),
    }
}

pub(crate) fn run(inner: &mut TapeInner, loss_id: NodeId) {
    let mut flowing: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
    flowing[loss_id] = Some(vec![1.0]);

    for id in (0..=loss_id).rev() {
        let Some(g) = flowing[id].take() else {
            continue;
        };
        if !inner.nodes[id].requires_grad {
            continue;
        }
        // Persist into the node so every reachable requires_grad tensor ends
        // up with a populated (and additively accumulated) grad buffer.
        {
            let node = &mut inner.nodes[id];
            match &mut node.grad {
                Some(buf) => {
                    for (b, gv) in buf.iter_mut().zip(&g) {
                        *b += gv;
                    }
                }
                None => node.grad = Some(g.clone()),
            }
        }

        let op = inner.nodes[id].op.clone();
        let nodes = &inner.nodes;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(nodes, &mut flowing, a, g.clone());
                acc(nodes, &mut flowing, b, g);
            }
            Op::Sub(a, b) => {
                acc(nodes, &mut flowing, a, g.clone());
                acc(nodes, &mut flowing, b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&nodes[b].data)
                    .map(|(gv, bv)| gv * bv)
                    .collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(&nodes[a].data)
                    .map(|(gv, av)| gv * av)
                    .collect();
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, b, db);
            }
            Op::Div(a, b) => {
                let ad = &nodes[a].data;
                let bd = &nodes[b].data;
                let da: Vec<f64> = g.iter().zip(bd).map(|(gv, bv)| gv / bv).collect();
                let db: Vec<f64> = g
                    .iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(gv, (av, bv))| -gv * av / (bv * bv))
                    .collect();
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, b, db);
            }
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                let bt = kernels::transpose(&nodes[b].data, k, n);
                let at = kernels::transpose(&nodes[a].data, m, k);
                let da = kernels::matmul(&g, &bt, m, n, k);
                let db = kernels::matmul(&at, &g, k, m, n);
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, b, db);
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a].shape[0], nodes[a].shape[1]);
                acc(nodes, &mut flowing, a, kernels::transpose(&g, n, m));
            }
            Op::Sigmoid(a) => {
                let y = &nodes[id].data;
                let da = g
                    .iter()
                    .zip(y)
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Tanh(a) => {
                let y = &nodes[id].data;
                let da = g
                    .iter()
                    .zip(y)
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Exp(a) => {
                let y = &nodes[id].data;
                let da = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Log(a) => {
                let x = &nodes[a].data;
                let da = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Sqrt(a) => {
                let y = &nodes[id].data;
                let da = g.iter().zip(y).map(|(gv, yv)| gv * 0.5 / yv).collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Abs(a) => {
                let x = &nodes[a].data;
                let da = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| {
                        // subgradient 0 at the kink
                        gv * if *xv > 0.0 {
                            1.0
                        } else if *xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Recip(a) => {
                let y = &nodes[id].data;
                let da = g.iter().zip(y).map(|(gv, yv)| -gv * yv * yv).collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::Scale(a, c) => {
                acc(nodes, &mut flowing, a, g.iter().map(|v| v * c).collect());
            }
            Op::Shift(a) => {
                acc(nodes, &mut flowing, a, g);
            }
            Op::ClampMin(a, c) => {
                let x = &nodes[a].data;
                let da = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > c { *gv } else { 0.0 })
                    .collect();
                acc(nodes, &mut flowing, a, da);
            }
            Op::MulScalar(a, s) => {
                let sv = nodes[s].data[0];
                let da: Vec<f64> = g.iter().map(|v| v * sv).collect();
                let ds = g
                    .iter()
                    .zip(&nodes[a].data)
                    .map(|(gv, av)| gv * av)
                    .sum::<f64>();
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, s, vec![ds]);
            }
            Op::AddScalar(a, s) => {
                let ds = g.iter().sum::<f64>();
                acc(nodes, &mut flowing, a, g);
                acc(nodes, &mut flowing, s, vec![ds]);
            }
            Op::MeanAxis0(a) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    for j in 0..c {
                        da[t * c + j] = g[j] / r as f64;
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::MeanAxis1(a) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    for j in 0..c {
                        da[t * c + j] = g[t] / c as f64;
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::VarAxis0(a) => {
                // d var_j / d x[t,j] = 2 (x[t,j] - mean_j) / r
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let x = &nodes[a].data;
                let mut mean = vec![0.0; c];
                for t in 0..r {
                    for j in 0..c {
                        mean[j] += x[t * c + j];
                    }
                }
                mean.iter_mut().for_each(|v| *v /= r as f64);
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    for j in 0..c {
                        da[t * c + j] = g[j] * 2.0 * (x[t * c + j] - mean[j]) / r as f64;
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::VarAxis1(a) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let x = &nodes[a].data;
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    let row = &x[t * c..(t + 1) * c];
                    let m = row.iter().sum::<f64>() / c as f64;
                    for j in 0..c {
                        da[t * c + j] = g[t] * 2.0 * (row[j] - m) / c as f64;
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::SumAll(a) => {
                acc(nodes, &mut flowing, a, vec![g[0]; nodes[a].data.len()]);
            }
            Op::MeanAll(a) => {
                let n = nodes[a].data.len();
                acc(nodes, &mut flowing, a, vec![g[0] / n as f64; n]);
            }
            Op::AddRow(a, v) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut dv = vec![0.0; c];
                for t in 0..r {
                    for j in 0..c {
                        dv[j] += g[t * c + j];
                    }
                }
                acc(nodes, &mut flowing, a, g);
                acc(nodes, &mut flowing, v, dv);
            }
            Op::MulRow(a, v) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let x = &nodes[a].data;
                let vv = &nodes[v].data;
                let mut da = vec![0.0; r * c];
                let mut dv = vec![0.0; c];
                for t in 0..r {
                    for j in 0..c {
                        da[t * c + j] = g[t * c + j] * vv[j];
                        dv[j] += g[t * c + j] * x[t * c + j];
                    }
                }
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, v, dv);
            }
            Op::AddCol(a, v) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut dv = vec![0.0; r];
                for t in 0..r {
                    for j in 0..c {
                        dv[t] += g[t * c + j];
                    }
                }
                acc(nodes, &mut flowing, a, g);
                acc(nodes, &mut flowing, v, dv);
            }
            Op::MulCol(a, v) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let x = &nodes[a].data;
                let vv = &nodes[v].data;
                let mut da = vec![0.0; r * c];
                let mut dv = vec![0.0; r];
                for t in 0..r {
                    for j in 0..c {
                        da[t * c + j] = g[t * c + j] * vv[t];
                        dv[t] += g[t * c + j] * x[t * c + j];
                    }
                }
                acc(nodes, &mut flowing, a, da);
                acc(nodes, &mut flowing, v, dv);
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut da = vec![0.0; r * c];
                for (pos, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += g[pos * c + j];
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::Row(a, i) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let mut da = vec![0.0; r * c];
                da[i * c..(i + 1) * c].copy_from_slice(&g);
                acc(nodes, &mut flowing, a, da);
            }
            Op::SliceCols(a, range) => {
                let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                let w = range.end - range.start;
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    da[t * c + range.start..t * c + range.end]
                        .copy_from_slice(&g[t * w..(t + 1) * w]);
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::ConcatCols(ids) => {
                let r = nodes[id].shape[0];
                let total = nodes[id].shape[1];
                let mut offset = 0;
                for &pid in &ids {
                    let w = nodes[pid].shape[1];
                    let mut dp = vec![0.0; r * w];
                    for t in 0..r {
                        dp[t * w..(t + 1) * w]
                            .copy_from_slice(&g[t * total + offset..t * total + offset + w]);
                    }
                    offset += w;
                    acc(nodes, &mut flowing, pid, dp);
                }
            }
            Op::StackRows(ids) => {
                let c = nodes[id].shape[1];
                for (row, &pid) in ids.iter().enumerate() {
                    acc(nodes, &mut flowing, pid, g[row * c..(row + 1) * c].to_vec());
                }
            }
            Op::ConcatVec(ids) => {
                let mut offset = 0;
                for &pid in &ids {
                    let n = nodes[pid].data.len();
                    acc(nodes, &mut flowing, pid, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SoftmaxRows(a) => {
                // dx = y * (g - sum(g * y)) per row
                let (r, c) = (nodes[id].shape[0], nodes[id].shape[1]);
                let y = &nodes[id].data;
                let mut da = vec![0.0; r * c];
                for t in 0..r {
                    let dot: f64 = (0..c).map(|j| g[t * c + j] * y[t * c + j]).sum();
                    for j in 0..c {
                        da[t * c + j] = y[t * c + j] * (g[t * c + j] - dot);
                    }
                }
                acc(nodes, &mut flowing, a, da);
            }
            Op::Conv1d { x, w, b } => {
                let (frames, cin) = (nodes[x].shape[0], nodes[x].shape[1]);
                let (cout, k) = (nodes[w].shape[0], nodes[w].shape[2]);
                let (dx, dw, db) = kernels::conv1d_backward(
                    &g,
                    &nodes[x].data,
                    &nodes[w].data,
                    frames,
                    cin,
                    cout,
                    k,
                );
                acc(nodes, &mut flowing, x, dx);
                acc(nodes, &mut flowing, w, dw);
                acc(nodes, &mut flowing, b, db);
            }
            Op::Reshape(a) => {
                acc(nodes, &mut flowing, a, g);
            }
            Op::ScaleGrad(a, factor) => {
                acc(
                    nodes,
                    &mut flowing,
                    a,
                    g.iter().map(|v| v * factor).collect(),
                );
            }
        }
    }
}
