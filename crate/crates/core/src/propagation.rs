//! Output-logit bound estimation under a per-feature perturbation box.
//!
//! Three chain propagators share one engine:
//!
//! * `Simple` - layerwise interval arithmetic; one matrix-vector pass per
//!   layer, activation evaluated exactly, error compounds quickly.
//! * `Quadratic` - keeps one coefficient matrix per earlier layer so the
//!   accumulated affine map can cancel terms; the activation is replaced by
//!   its parallel-line relaxation.
//! * `Combined` - both candidates per layer, tightened elementwise, with the
//!   tightened interval feeding every later step of both recursions.
//!
//! `bounds_general` runs the same combined scheme over a feedforward DAG,
//! tracking one coefficient matrix per (source, live node) pair. On a pure
//! chain it reproduces `bounds_combined` exactly; the low-level kernels are
//! shared so the floating-point evaluation order is identical.
//!
//! The engine can also accumulate the partials of every bound w.r.t. the
//! per-feature radii `eps` on the fly, one rank-expansion per layer, without
//! waiting for the forward recursion to finish. The gradient module wraps
//! that path.

use crate::error::{Error, Result};
use crate::linalg::{vadd_assign, vmul, Matrix};
use crate::model::{Budget, DagNetwork, Network};
use crate::relaxation::{relax_grad, relax_with_case, RelaxCase, Relaxation};

/// Which bound recursion to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Simple,
    Quadratic,
    Combined,
}

/// Pre-activation bounds for every level after the input.
///
/// Index 0 holds the first affine output; the last entry bounds the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Envelope used when leaving each hidden level (empty for 2-level nets).
    pub relaxations: Vec<Vec<Relaxation>>,
}

impl LayerBounds {
    pub fn levels(&self) -> usize {
        self.lower.len()
    }

    pub fn output_lower(&self) -> &[f64] {
        self.lower.last().unwrap()
    }

    pub fn output_upper(&self) -> &[f64] {
        self.upper.last().unwrap()
    }
}

/// Branch bookkeeping of one combined run: relaxation case per hidden neuron
/// and, per tightened level, whether the quadratic candidate was selected.
#[derive(Debug, Clone, PartialEq)]
pub struct PropTrace {
    pub cases: Vec<Vec<RelaxCase>>,
    pub lower_quad: Vec<Vec<bool>>,
    pub upper_quad: Vec<Vec<bool>>,
}

/// Per-level bound gradients: `(d lower / d eps, d upper / d eps)`, each
/// `level_size x input_size`.
#[derive(Debug, Clone)]
pub(crate) struct LevelGrads {
    pub per_level: Vec<(Matrix, Matrix)>,
}

pub(crate) struct EngineOutput {
    pub bounds: LayerBounds,
    pub grads: Option<LevelGrads>,
    pub trace: Option<PropTrace>,
}

/// Layerwise interval propagation.
pub fn bounds_simple(net: &Network, budget: &Budget) -> Result<LayerBounds> {
    chain_engine(net, budget, Algorithm::Simple, false, false).map(|o| o.bounds)
}

/// Accumulated linear-relaxation propagation.
pub fn bounds_quadratic(net: &Network, budget: &Budget) -> Result<LayerBounds> {
    chain_engine(net, budget, Algorithm::Quadratic, false, false).map(|o| o.bounds)
}

/// Elementwise tightening of both propagators in a single interleaved pass.
pub fn bounds_combined(net: &Network, budget: &Budget) -> Result<LayerBounds> {
    chain_engine(net, budget, Algorithm::Combined, false, false).map(|o| o.bounds)
}

/// Combined bounds plus the branch trace.
pub fn bounds_combined_traced(net: &Network, budget: &Budget) -> Result<(LayerBounds, PropTrace)> {
    let out = chain_engine(net, budget, Algorithm::Combined, false, true)?;
    Ok((out.bounds, out.trace.unwrap()))
}

pub fn bounds(net: &Network, budget: &Budget, algo: Algorithm) -> Result<LayerBounds> {
    chain_engine(net, budget, algo, false, false).map(|o| o.bounds)
}

// ---------------------------------------------------------------------------
// shared low-level kernels
//
// The chain and DAG propagators must agree bit-for-bit on chain graphs, so
// every floating-point reduction goes through these helpers.

/// Exact bounds of `W x + b` over the box `x +- eps`.
fn affine_box_image(w: &Matrix, b: &[f64], x: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (wp, wm) = w.split_pos_neg();
    let wx = w.matvec(x);
    let p = wp.matvec(eps);
    let m = wm.matvec(eps);
    let lo = (0..w.rows()).map(|r| wx[r] - p[r] + m[r] + b[r]).collect();
    let hi = (0..w.rows()).map(|r| wx[r] - m[r] + p[r] + b[r]).collect();
    (lo, hi)
}

/// acc_lo += W+ in_lo + W- in_hi, acc_hi += W- in_lo + W+ in_hi.
fn add_interval_contrib(
    acc_lo: &mut [f64],
    acc_hi: &mut [f64],
    w: &Matrix,
    in_lo: &[f64],
    in_hi: &[f64],
) {
    let (wp, wm) = w.split_pos_neg();
    let a = wp.matvec(in_lo);
    let b = wm.matvec(in_hi);
    for r in 0..acc_lo.len() {
        acc_lo[r] += a[r] + b[r];
    }
    let c = wm.matvec(in_lo);
    let d = wp.matvec(in_hi);
    for r in 0..acc_hi.len() {
        acc_hi[r] += c[r] + d[r];
    }
}

/// center + sum of coefficient matrices applied to their offset intervals.
fn quad_from_offsets(
    center: &[f64],
    terms: &[(&Matrix, &[f64], &[f64])],
) -> (Vec<f64>, Vec<f64>) {
    let mut lo = center.to_vec();
    let mut hi = center.to_vec();
    for (m, off_lo, off_hi) in terms {
        let (mp, mn) = m.split_pos_neg();
        let a = mn.matvec(off_hi);
        let b = mp.matvec(off_lo);
        for r in 0..lo.len() {
            lo[r] += a[r] + b[r];
        }
        let c = mn.matvec(off_lo);
        let d = mp.matvec(off_hi);
        for r in 0..hi.len() {
            hi[r] += c[r] + d[r];
        }
    }
    (lo, hi)
}

/// One propagated coefficient step: W * diag(slopes) * A.
fn push_coef(w: &Matrix, slopes: &[f64], a: &Matrix) -> Matrix {
    w.matmul(&a.scale_rows(slopes))
}

// ---------------------------------------------------------------------------
// chain engine

struct GradState {
    /// d cur_lo / d eps and d cur_hi / d eps for the current level.
    gl: Matrix,
    gu: Matrix,
    /// Per stored term j, per radius component s: d coef_j / d eps_s.
    gcoefs: Vec<Vec<Matrix>>,
    goff_lo: Vec<Matrix>,
    goff_hi: Vec<Matrix>,
    gcenter: Matrix,
    per_level: Vec<(Matrix, Matrix)>,
}

/// out[r][s] = sum_c keep(mask[r][c]) * gm[s][r][c] * v[c], with keep picking
/// strictly positive or strictly negative entries. Zero entries contribute to
/// neither side.
fn masked_grad_apply(gm: &[Matrix], mask: &Matrix, positive: bool, v: &[f64]) -> Matrix {
    let rows = mask.rows();
    let n1 = gm.len();
    let mut out = Matrix::zeros(rows, n1);
    for (s, g) in gm.iter().enumerate() {
        for r in 0..rows {
            let mrow = mask.row(r);
            let grow = g.row(r);
            let mut acc = 0.0;
            for c in 0..mrow.len() {
                let keep = if positive { mrow[c] > 0.0 } else { mrow[c] < 0.0 };
                if keep {
                    acc += grow[c] * v[c];
                }
            }
            out.set(r, s, out.get(r, s) + acc);
        }
    }
    out
}

pub(crate) fn chain_engine(
    net: &Network,
    budget: &Budget,
    algo: Algorithm,
    want_grad: bool,
    want_trace: bool,
) -> Result<EngineOutput> {
    if budget.dim() != net.input_size() {
        return Err(Error::DimMismatch(format!(
            "budget dimension {} != network input {}",
            budget.dim(),
            net.input_size()
        )));
    }
    let act = net.activation();
    let layers = net.layers();
    let n1 = net.input_size();
    let (x, eps) = (budget.x(), budget.eps());

    let first = &layers[0];
    let (mut cur_lo, mut cur_hi) = affine_box_image(&first.weight, &first.bias, x, eps);

    let mut out = LayerBounds {
        lower: vec![cur_lo.clone()],
        upper: vec![cur_hi.clone()],
        relaxations: Vec::new(),
    };
    let mut trace = want_trace.then(|| PropTrace {
        cases: Vec::new(),
        lower_quad: Vec::new(),
        upper_quad: Vec::new(),
    });

    let need_quad = algo != Algorithm::Simple;
    let mut coefs: Vec<Matrix> = Vec::new();
    let mut off_lo: Vec<Vec<f64>> = Vec::new();
    let mut off_hi: Vec<Vec<f64>> = Vec::new();
    let mut center: Vec<f64> = Vec::new();
    if need_quad {
        coefs.push(first.weight.clone());
        off_lo.push(eps.iter().map(|e| -e).collect());
        off_hi.push(eps.to_vec());
        center = first.weight.matvec(x);
        vadd_assign(&mut center, &first.bias);
    }

    let mut grad = if want_grad {
        let ga = first.weight.abs();
        let gl = ga.scale(-1.0);
        let mut st = GradState {
            gl: gl.clone(),
            gu: ga.clone(),
            gcoefs: Vec::new(),
            goff_lo: Vec::new(),
            goff_hi: Vec::new(),
            gcenter: Matrix::zeros(first.weight.rows(), n1),
            per_level: vec![(gl, ga)],
        };
        if need_quad {
            st.gcoefs.push(vec![Matrix::zeros(first.weight.rows(), n1); n1]);
            st.goff_lo.push(Matrix::identity(n1).scale(-1.0));
            st.goff_hi.push(Matrix::identity(n1));
        }
        Some(st)
    } else {
        None
    };

    for layer in &layers[1..] {
        let w = &layer.weight;
        let b = &layer.bias;
        let rows = w.rows();

        let mut rels = Vec::with_capacity(cur_lo.len());
        let mut cases = Vec::with_capacity(cur_lo.len());
        for (&lo, &hi) in cur_lo.iter().zip(&cur_hi) {
            let (r, c) = relax_with_case(act, lo, hi)?;
            rels.push(r);
            cases.push(c);
        }
        let slopes: Vec<f64> = rels.iter().map(|r| r.slope).collect();
        let rel_lo: Vec<f64> = rels.iter().map(|r| r.lower).collect();
        let rel_hi: Vec<f64> = rels.iter().map(|r| r.upper).collect();

        // interval candidate from the exact activation on the current box
        let (l_simp, u_simp) = if algo != Algorithm::Quadratic {
            let post_lo = act.apply_vec(&cur_lo);
            let post_hi = act.apply_vec(&cur_hi);
            let mut lo = vec![0.0; rows];
            let mut hi = vec![0.0; rows];
            add_interval_contrib(&mut lo, &mut hi, w, &post_lo, &post_hi);
            vadd_assign(&mut lo, b);
            vadd_assign(&mut hi, b);
            (lo, hi)
        } else {
            (Vec::new(), Vec::new())
        };

        // gradient pieces that consume the pre-update state
        let mut gl_simp = None;
        let mut gu_simp = None;
        if let Some(st) = grad.as_mut() {
            if algo != Algorithm::Quadratic {
                let dl: Vec<f64> = cur_lo.iter().map(|&v| act.derivative(v)).collect();
                let du: Vec<f64> = cur_hi.iter().map(|&v| act.derivative(v)).collect();
                let (wp, wm) = w.split_pos_neg();
                let sl = st.gl.scale_rows(&dl);
                let su = st.gu.scale_rows(&du);
                gl_simp = Some(wp.matmul(&sl).add(&wm.matmul(&su)));
                gu_simp = Some(wm.matmul(&sl).add(&wp.matmul(&su)));
            }
            if need_quad {
                let mut gslope = Matrix::zeros(cur_lo.len(), n1);
                let mut goff_lo_cur = Matrix::zeros(cur_lo.len(), n1);
                let mut goff_hi_cur = Matrix::zeros(cur_lo.len(), n1);
                for r in 0..cur_lo.len() {
                    let rg = relax_grad(act, cur_lo[r], cur_hi[r])?;
                    let glr = st.gl.row(r);
                    let gur = st.gu.row(r);
                    for s in 0..n1 {
                        gslope.set(r, s, rg.slope_lo * glr[s] + rg.slope_hi * gur[s]);
                        goff_lo_cur.set(r, s, rg.lower_lo * glr[s] + rg.lower_hi * gur[s]);
                        goff_hi_cur.set(r, s, rg.upper_lo * glr[s] + rg.upper_hi * gur[s]);
                    }
                }
                // product rule through coef_new = W diag(slopes) coef_old
                for (j, gj) in st.gcoefs.iter_mut().enumerate() {
                    for (s, g) in gj.iter_mut().enumerate() {
                        let slope_col: Vec<f64> = (0..cur_lo.len()).map(|r| gslope.get(r, s)).collect();
                        let t = coefs[j].scale_rows(&slope_col).add(&g.scale_rows(&slopes));
                        *g = w.matmul(&t);
                    }
                }
                st.gcoefs.push(vec![Matrix::zeros(rows, cur_lo.len()); n1]);
                st.goff_lo.push(goff_lo_cur);
                st.goff_hi.push(goff_hi_cur);
                let t = gslope.scale_rows(&center).add(&st.gcenter.scale_rows(&slopes));
                st.gcenter = w.matmul(&t);
            }
        }

        // quadratic candidate
        let (l_quad, u_quad) = if need_quad {
            for m in coefs.iter_mut() {
                *m = push_coef(w, &slopes, m);
            }
            coefs.push(w.clone());
            off_lo.push(rel_lo);
            off_hi.push(rel_hi);
            center = {
                let mut c = w.matvec(&vmul(&slopes, &center));
                vadd_assign(&mut c, b);
                c
            };
            let terms: Vec<(&Matrix, &[f64], &[f64])> = coefs
                .iter()
                .zip(off_lo.iter().zip(&off_hi))
                .map(|(m, (a, bb))| (m, a.as_slice(), bb.as_slice()))
                .collect();
            quad_from_offsets(&center, &terms)
        } else {
            (Vec::new(), Vec::new())
        };

        let (mut gl_quad, mut gu_quad) = (None, None);
        if let Some(st) = grad.as_mut() {
            if need_quad {
                let mut gl = st.gcenter.clone();
                let mut gu = st.gcenter.clone();
                for j in 0..coefs.len() {
                    let (cp, cn) = coefs[j].split_pos_neg();
                    gl.add_assign(&masked_grad_apply(&st.gcoefs[j], &coefs[j], false, &off_hi[j]));
                    gl.add_assign(&cn.matmul(&st.goff_hi[j]));
                    gl.add_assign(&masked_grad_apply(&st.gcoefs[j], &coefs[j], true, &off_lo[j]));
                    gl.add_assign(&cp.matmul(&st.goff_lo[j]));

                    gu.add_assign(&masked_grad_apply(&st.gcoefs[j], &coefs[j], false, &off_lo[j]));
                    gu.add_assign(&cn.matmul(&st.goff_lo[j]));
                    gu.add_assign(&masked_grad_apply(&st.gcoefs[j], &coefs[j], true, &off_hi[j]));
                    gu.add_assign(&cp.matmul(&st.goff_hi[j]));
                }
                gl_quad = Some(gl);
                gu_quad = Some(gu);
            }
        }

        // tighten
        let mut sel_lo = Vec::new();
        let mut sel_hi = Vec::new();
        let mut crossed = vec![false; rows];
        (cur_lo, cur_hi) = match algo {
            Algorithm::Simple => (l_simp, u_simp),
            Algorithm::Quadratic => (l_quad, u_quad),
            Algorithm::Combined => {
                let mut lo = vec![0.0; rows];
                let mut hi = vec![0.0; rows];
                sel_lo = vec![false; rows];
                sel_hi = vec![false; rows];
                for r in 0..rows {
                    // a strictly better interval candidate wins; ties keep the
                    // quadratic branch so the gradient rule is deterministic
                    if l_simp[r] > l_quad[r] {
                        lo[r] = l_simp[r];
                    } else {
                        lo[r] = l_quad[r];
                        sel_lo[r] = true;
                    }
                    if u_simp[r] < u_quad[r] {
                        hi[r] = u_simp[r];
                    } else {
                        hi[r] = u_quad[r];
                        sel_hi[r] = true;
                    }
                    // rounding can cross near-degenerate candidates taken
                    // from different branches; ordering the pair widens by at
                    // most the crossing and keeps both sides sound
                    if lo[r] > hi[r] {
                        std::mem::swap(&mut lo[r], &mut hi[r]);
                        crossed[r] = true;
                    }
                }
                (lo, hi)
            }
        };

        if let Some(st) = grad.as_mut() {
            let (gl, gu) = match algo {
                Algorithm::Simple => (gl_simp.unwrap(), gu_simp.unwrap()),
                Algorithm::Quadratic => (gl_quad.unwrap(), gu_quad.unwrap()),
                Algorithm::Combined => {
                    let (gls, gus) = (gl_simp.unwrap(), gu_simp.unwrap());
                    let (glq, guq) = (gl_quad.unwrap(), gu_quad.unwrap());
                    let mut gl = Matrix::zeros(rows, n1);
                    let mut gu = Matrix::zeros(rows, n1);
                    for r in 0..rows {
                        let lo_src = if sel_lo[r] { glq.row(r) } else { gls.row(r) };
                        let hi_src = if sel_hi[r] { guq.row(r) } else { gus.row(r) };
                        let (lo_src, hi_src) =
                            if crossed[r] { (hi_src, lo_src) } else { (lo_src, hi_src) };
                        gl.row_mut(r).copy_from_slice(lo_src);
                        gu.row_mut(r).copy_from_slice(hi_src);
                    }
                    (gl, gu)
                }
            };
            st.gl = gl.clone();
            st.gu = gu.clone();
            st.per_level.push((gl, gu));
        }

        out.lower.push(cur_lo.clone());
        out.upper.push(cur_hi.clone());
        out.relaxations.push(rels);
        if let Some(t) = trace.as_mut() {
            t.cases.push(cases);
            if algo == Algorithm::Combined {
                t.lower_quad.push(sel_lo);
                t.upper_quad.push(sel_hi);
            }
        }
    }

    Ok(EngineOutput {
        bounds: out,
        grads: grad.map(|st| LevelGrads { per_level: st.per_level }),
        trace,
    })
}

// ---------------------------------------------------------------------------
// DAG propagation

/// Combined bound estimation over a general feedforward DAG.
///
/// Keeps, for every earlier node h and every node g that still has unprocessed
/// outgoing edges, the coefficient matrix mapping node h's relaxation offsets
/// into node g. Entries are dropped as soon as all consumers are processed,
/// which on a chain leaves exactly one matrix per predecessor.
pub fn bounds_general(dag: &DagNetwork, budget: &Budget) -> Result<LayerBounds> {
    if budget.dim() != dag.input_size() {
        return Err(Error::DimMismatch(format!(
            "budget dimension {} != network input {}",
            budget.dim(),
            dag.input_size()
        )));
    }
    crate::model::topo_paths_check(dag)?;
    let n = dag.depth();
    let act = dag.activation();
    let (x, eps) = (budget.x(), budget.eps());
    let inc = dag.incoming();

    // last node that consumes each node's coefficient matrices
    let mut last_use = vec![0usize; n + 1];
    for e in dag.edges() {
        last_use[e.from] = last_use[e.from].max(e.to);
    }

    // per-node state, 1-based
    let mut lo: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut hi: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut post_lo: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut post_hi: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut slopes: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut off_lo: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut off_hi: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut center: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut rels: Vec<Vec<Relaxation>> = vec![Vec::new(); n + 1];

    post_lo[1] = crate::linalg::vsub(x, eps);
    post_hi[1] = {
        let mut v = x.to_vec();
        vadd_assign(&mut v, eps);
        v
    };
    slopes[1] = vec![1.0; dag.input_size()];
    off_lo[1] = eps.iter().map(|e| -e).collect();
    off_hi[1] = eps.to_vec();
    center[1] = x.to_vec();

    // coefficient of node h's offsets inside node g, keyed [h][g]
    let mut coef: Vec<Vec<Option<Matrix>>> = vec![vec![None; n + 1]; n + 1];

    // node 2 only sees the input, an exact affine image
    {
        let e = inc[2]
            .first()
            .ok_or_else(|| Error::InvalidModel("node 2 has no incoming edge".into()))?;
        let (l2, h2) = affine_box_image(&e.weight, dag.bias(2), x, eps);
        lo[2] = l2;
        hi[2] = h2;
        coef[1][2] = Some(e.weight.clone());
        center[2] = {
            let mut c = e.weight.matvec(x);
            vadd_assign(&mut c, dag.bias(2));
            c
        };
    }

    for node in 3..=n {
        // finalize the relaxation of the newest settled node
        let prev = node - 1;
        let mut r = Vec::with_capacity(lo[prev].len());
        for (&l, &h) in lo[prev].iter().zip(&hi[prev]) {
            r.push(relax_with_case(act, l, h)?.0);
        }
        slopes[prev] = r.iter().map(|e| e.slope).collect();
        off_lo[prev] = r.iter().map(|e| e.lower).collect();
        off_hi[prev] = r.iter().map(|e| e.upper).collect();
        post_lo[prev] = act.apply_vec(&lo[prev]);
        post_hi[prev] = act.apply_vec(&hi[prev]);
        rels[prev] = r;

        let rows = dag.sizes()[node - 1];

        // interval candidate over all incoming edges
        let mut l_simp = vec![0.0; rows];
        let mut u_simp = vec![0.0; rows];
        for e in &inc[node] {
            add_interval_contrib(&mut l_simp, &mut u_simp, &e.weight, &post_lo[e.from], &post_hi[e.from]);
        }
        vadd_assign(&mut l_simp, dag.bias(node));
        vadd_assign(&mut u_simp, dag.bias(node));

        // coefficient recursion: direct edge plus every relaxed path
        for h in 1..node {
            let mut acc: Option<Matrix> = None;
            for e in &inc[node] {
                let g = e.from;
                if g == h {
                    let w = e.weight.clone();
                    acc = Some(match acc {
                        None => w,
                        Some(mut m) => {
                            m.add_assign(&w);
                            m
                        }
                    });
                } else if g > h {
                    if let Some(a) = &coef[h][g] {
                        let term = push_coef(&e.weight, &slopes[g], a);
                        acc = Some(match acc {
                            None => term,
                            Some(mut m) => {
                                m.add_assign(&term);
                                m
                            }
                        });
                    }
                }
            }
            coef[h][node] = acc;
        }

        center[node] = {
            let mut c = vec![0.0; rows];
            for e in &inc[node] {
                vadd_assign(&mut c, &e.weight.matvec(&vmul(&slopes[e.from], &center[e.from])));
            }
            vadd_assign(&mut c, dag.bias(node));
            c
        };

        let terms: Vec<(&Matrix, &[f64], &[f64])> = (1..node)
            .filter_map(|h| {
                coef[h][node]
                    .as_ref()
                    .map(|m| (m, off_lo[h].as_slice(), off_hi[h].as_slice()))
            })
            .collect();
        let (l_quad, u_quad) = quad_from_offsets(&center[node], &terms);

        let mut l = vec![0.0; rows];
        let mut u = vec![0.0; rows];
        for r in 0..rows {
            l[r] = if l_simp[r] > l_quad[r] { l_simp[r] } else { l_quad[r] };
            u[r] = if u_simp[r] < u_quad[r] { u_simp[r] } else { u_quad[r] };
            if l[r] > u[r] {
                std::mem::swap(&mut l[r], &mut u[r]);
            }
        }
        lo[node] = l;
        hi[node] = u;

        // drop coefficient matrices nothing will read again
        for g in 2..node {
            if last_use[g] <= node {
                for h in 1..g {
                    coef[h][g] = None;
                }
            }
        }
    }

    Ok(LayerBounds {
        lower: lo.drain(2..).collect(),
        upper: hi.drain(2..).collect(),
        relaxations: rels.drain(2..).filter(|r| !r.is_empty()).collect(),
    })
}
