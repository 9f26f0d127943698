//! Analytic gradients of the batch loss with respect to every trainable
//! tensor. The community memory is a state buffer and receives no gradient;
//! the gate tensors are reached only through the separation constraint
//! evaluated on the post-update memory.

use crate::linalg::{dot, Mat};

use super::forward::{ForwardTrace, MemberView, SideTrace, TripletBatch};
use super::{ModelParams, PccdModel, Side};

/// Gradient of `alpha * constraint(d)` with respect to the rows of `d`.
/// Diagonal cosines are constant and contribute nothing; zero-norm rows get
/// zero gradient.
fn constraint_grad(d: &Mat, alpha: f64) -> Mat {
    let k = d.rows();
    let dim = d.cols();
    let mut out = Mat::zeros(k, dim);
    let norms: Vec<f64> = (0..k).map(|i| crate::linalg::norm(d.row(i))).collect();
    let factor = alpha / (k * k) as f64;
    for a in 0..k {
        if norms[a] == 0.0 {
            continue;
        }
        let row_a = d.row(a);
        for b in 0..k {
            if b == a || norms[b] == 0.0 {
                continue;
            }
            let row_b = d.row(b);
            let cos = dot(row_a, row_b) / (norms[a] * norms[b]);
            let out_a = out.row_mut(a);
            for col in 0..dim {
                out_a[col] += factor
                    * (row_b[col] / (norms[a] * norms[b])
                        - cos * row_a[col] / (norms[a] * norms[a]));
            }
        }
    }
    out
}

impl PccdModel {
    /// Backward pass over one batch, returning gradients shaped exactly like
    /// the parameters. Pure accumulation: the model is not mutated.
    pub fn backward(&self, batch: &TripletBatch, trace: &ForwardTrace) -> ModelParams {
        let cfg = &self.config;
        let b = batch.y.len();
        let n = 3 * b;
        let mut grads = ModelParams::zeros(cfg);
        let alpha_eff = self.ablation.effective_alpha(cfg.alpha);

        let mut dc_main = vec![vec![0.0; cfg.k]; n];
        let mut dc_sparse = vec![vec![0.0; cfg.k]; n];

        // Pairwise head: cross entropy -> correlation representations ->
        // affiliation gradients of the three members.
        for t in 0..b {
            let tt = &trace.triplets[t];
            let delta = if tt.clamped {
                0.0
            } else {
                (tt.y_hat - batch.y[t]) / b as f64
            };
            for ((g, &rij), &rik) in grads.w_o.iter_mut().zip(&tt.r_ij).zip(&tt.r_ik) {
                *g += delta * (rij - rik);
            }
            grads.b_o += delta;

            let (i, j, k) = (3 * t, 3 * t + 1, 3 * t + 2);
            for (half, side) in [(0, Side::Sparse), (1, Side::Main)] {
                let d_r = cfg.d_r;
                let offset = half * d_r;
                let p = self.params.side(side);
                let strace = side_trace(trace, side);
                let dc = match side {
                    Side::Main => &mut dc_main,
                    Side::Sparse => &mut dc_sparse,
                };
                // dq = d(loss)/d(pre-tanh correlation), for both pairs
                let dq_ij: Vec<f64> = (0..d_r)
                    .map(|d| {
                        let r = tt.r_ij[offset + d];
                        delta * self.params.w_o[offset + d] * (1.0 - r * r)
                    })
                    .collect();
                let dq_ik: Vec<f64> = (0..d_r)
                    .map(|d| {
                        let r = tt.r_ik[offset + d];
                        -delta * self.params.w_o[offset + d] * (1.0 - r * r)
                    })
                    .collect();

                let gside = grads.side_mut(side);
                let diff_ij: Vec<f64> = strace.c[i]
                    .iter()
                    .zip(&strace.c[j])
                    .map(|(&a, &bb)| a - bb)
                    .collect();
                let diff_ik: Vec<f64> = strace.c[i]
                    .iter()
                    .zip(&strace.c[k])
                    .map(|(&a, &bb)| a - bb)
                    .collect();
                gside.w_r.add_outer(&dq_ij, &diff_ij);
                gside.w_r.add_outer(&dq_ik, &diff_ik);
                for ((g, &a), &bb) in gside.b_r.iter_mut().zip(&dq_ij).zip(&dq_ik) {
                    *g += a + bb;
                }
                let back_ij = p.w_r.t_matvec(&dq_ij);
                let back_ik = p.w_r.t_matvec(&dq_ik);
                for c in 0..cfg.k {
                    dc[i][c] += back_ij[c] + back_ik[c];
                    dc[j][c] -= back_ij[c];
                    dc[k][c] -= back_ik[c];
                }
            }
        }

        self.side_backward(Side::Main, &batch.main, &trace.main, &dc_main, alpha_eff, &mut grads);
        self.side_backward(
            Side::Sparse,
            &batch.sparse,
            &trace.sparse,
            &dc_sparse,
            alpha_eff,
            &mut grads,
        );
        grads
    }

    fn side_backward(
        &self,
        side: Side,
        views: &[MemberView],
        strace: &SideTrace,
        dc: &[Vec<f64>],
        alpha_eff: f64,
        grads: &mut ModelParams,
    ) {
        let cfg = &self.config;
        let p = self.params.side(side);
        let d_mem = self.memory.side(side);
        let dim = cfg.dim(side);
        let n = views.len();
        let inv_n = 1.0 / n as f64;
        let mut dw_comm = vec![0.0; cfg.c_raw];

        let gside = grads.side_mut(side);

        // Affiliation backward: dc -> dv (post-normalization gradient).
        let mut dv = vec![vec![0.0; dim]; n];
        for m in 0..n {
            let tau = &strace.tau[m];
            let mut dtau = vec![0.0; dim];
            for k in 0..cfg.k {
                let dck = dc[m][k];
                if dck == 0.0 {
                    continue;
                }
                let ck = strace.c[m][k];
                let dg = dck * ck * (1.0 - ck);
                let row = d_mem.row(k);
                for d in 0..dim {
                    gside.u_c[d] += dg * tau[d] * row[d];
                    dtau[d] += dg * p.u_c[d] * row[d];
                }
            }
            for d in 0..dim {
                dv[m][d] += dtau[d] * (1.0 - tau[d] * tau[d]);
            }
        }

        // Constraint backward through the gated memory update. Skipped when
        // the constraint carries no weight: then the gate tensors get zero
        // gradient, their only path into the loss.
        if alpha_eff > 0.0 {
            let ddstar = constraint_grad(&strace.d_star, alpha_eff);
            for m in 0..n {
                let v = &strace.v[m];
                let z = &strace.z[m];
                let mut dz = vec![0.0; dim];
                for k in 0..cfg.k {
                    let g_row = ddstar.row(k);
                    let s_row = strace.s[m].row(k);
                    let d_k = d_mem.row(k);
                    for d in 0..dim {
                        let g = g_row[d] * inv_n;
                        if g == 0.0 {
                            continue;
                        }
                        dz[d] += g * s_row[d];
                        let ds = g * (z[d] - d_k[d]);
                        let dsin = ds * s_row[d] * (1.0 - s_row[d]);
                        if dsin == 0.0 {
                            continue;
                        }
                        let wsrow = gside.w_s.row_mut(d);
                        for col in 0..dim {
                            wsrow[col] += dsin * v[col];
                            wsrow[dim + col] += dsin * d_k[col];
                        }
                        gside.b_s[d] += dsin;
                        let prow = p.w_s.row(d);
                        for col in 0..dim {
                            dv[m][col] += dsin * prow[col];
                        }
                    }
                }
                let dzin: Vec<f64> = dz
                    .iter()
                    .zip(z)
                    .map(|(&dzd, &zd)| dzd * (1.0 - zd * zd))
                    .collect();
                gside.w_z.add_outer(&dzin, v);
                for (g, &d) in gside.b_z.iter_mut().zip(&dzin) {
                    *g += d;
                }
                let add = p.w_z.t_matvec(&dzin);
                for d in 0..dim {
                    dv[m][d] += add[d];
                }
            }
        }

        // Batch-norm backward: dv -> du (pre-normalization gradient), plus
        // scale and shift gradients.
        for m in 0..n {
            for d in 0..dim {
                gside.bn_shift[d] += dv[m][d];
                gside.bn_scale[d] += dv[m][d] * strace.x_hat[m][d];
            }
        }
        let mut du = vec![vec![0.0; dim]; n];
        for d in 0..dim {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for m in 0..n {
                let dxh = dv[m][d] * p.bn_scale[d];
                s1 += dxh;
                s2 += dxh * strace.x_hat[m][d];
            }
            let k_inv = strace.inv_std[d] * inv_n;
            for m in 0..n {
                let dxh = dv[m][d] * p.bn_scale[d];
                du[m][d] = k_inv * (n as f64 * dxh - s1 - strace.x_hat[m][d] * s2);
            }
        }

        // Split du into the direct-transform and propagation paths; the raw
        // community block is input data and absorbs its share silently.
        let offset = match side {
            Side::Main => cfg.c_raw,
            Side::Sparse => 0,
        };
        for m in 0..n {
            let view = &views[m];
            let due = &du[m][offset..offset + cfg.d_e];
            let dup = &du[m][offset + cfg.d_e..];

            if !self.ablation.no_dtr {
                let ve = &strace.v_e[m];
                let dein: Vec<f64> = due
                    .iter()
                    .zip(ve)
                    .map(|(&g, &e)| g * (1.0 - e * e))
                    .collect();
                for (g, &d) in gside.b_e.iter_mut().zip(&dein) {
                    *g += d;
                }
                for &(obj, w) in &view.neigh {
                    for r in 0..cfg.d_e {
                        gside.w_e.row_mut(r)[obj] += w * dein[r];
                    }
                }
            }

            if view.neigh.is_empty() {
                continue;
            }
            if self.ablation.no_nf {
                let soft = 1.0 / view.neigh.len() as f64;
                for &(obj, _) in &view.neigh {
                    let hrow = gside.h.row_mut(obj);
                    for d in 0..cfg.d_h {
                        hrow[d] += soft * dup[d];
                    }
                }
            } else {
                let att = &strace.att[m];
                let dsofts: Vec<f64> = att.iter().map(|e| dot(dup, p.h.row(e.obj))).collect();
                let soft_dot: f64 = att
                    .iter()
                    .zip(&dsofts)
                    .map(|(e, &ds)| e.soft * ds)
                    .sum();
                for (e, &dsoft) in att.iter().zip(&dsofts) {
                    {
                        let hrow = gside.h.row_mut(e.obj);
                        for d in 0..cfg.d_h {
                            hrow[d] += e.soft * dup[d];
                        }
                    }
                    let dlogit = e.soft * (dsoft - soft_dot);
                    let da = dlogit * self.comm_weight(side, e.obj);
                    if side == Side::Main && !self.ablation.no_cf {
                        if let Some(cidx) = self.main_obj_comm[e.obj] {
                            dw_comm[cidx] += dlogit * e.a;
                        }
                    }
                    let dtin: Vec<f64> = e
                        .t
                        .iter()
                        .zip(&p.u_p)
                        .map(|(&t, &u)| da * u * (1.0 - t * t))
                        .collect();
                    gside.w_p.add_outer(&dtin, p.h.row(e.obj));
                    for ((gb, gu), (&d, &t)) in gside
                        .b_p
                        .iter_mut()
                        .zip(gside.u_p.iter_mut())
                        .zip(dtin.iter().zip(&e.t))
                    {
                        *gb += d;
                        *gu += da * t;
                    }
                    let add = p.w_p.t_matvec(&dtin);
                    let hrow = gside.h.row_mut(e.obj);
                    for d in 0..cfg.d_h {
                        hrow[d] += add[d];
                    }
                }
            }
        }

        for (g, d) in grads.w_comm.iter_mut().zip(dw_comm) {
            *g += d;
        }
    }
}

fn side_trace<'a>(trace: &'a ForwardTrace, side: Side) -> &'a SideTrace {
    match side {
        Side::Main => &trace.main,
        Side::Sparse => &trace.sparse,
    }
}
