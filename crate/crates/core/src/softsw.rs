//! Smooth affine-gap Smith-Waterman.
//!
//! Three tables over a `(T1+1)×(T2+1)` grid whose row 0 and column 0 are `−∞`:
//!
//! ```text
//! D[i][j]  = S[i][j] + max^γ(0, D[i-1][j-1], Ix[i-1][j-1], Iy[i-1][j-1])
//! Ix[i][j] = max^γ(D[i][j-1] - go, Ix[i][j-1] - ge)
//! Iy[i][j] = max^γ(D[i-1][j] - go, Ix[i-1][j] - go, Iy[i-1][j] - ge)
//! ```
//!
//! The scalar score is `max^γ` over every interior `D` cell. The `Iy`
//! recursion accepts an `Ix` predecessor while `Ix` does not accept `Iy`;
//! the asymmetry is kept as is.
//!
//! Because each `max^γ` is a log-sum-exp, the score equals the smoothed sum
//! over every alignment path of the three-state machine, which is what
//! [`sw_enumerate_paths`] computes by brute force on small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seqcore::AlignmentParams;
use crate::smoothops::{lse, weight};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Largest `T1·T2` accepted by the path enumerator.
pub const MAX_ENUMERATION_CELLS: usize = 25;

/// Position-dependent gap penalties, `T1×T2`, indexed by the cell whose gap
/// state is being computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGaps {
    pub open: Matrix,
    pub extend: Matrix,
}

#[derive(Clone, Copy)]
enum Gaps<'a> {
    Shared { open: f64, extend: f64 },
    Cells(&'a CellGaps),
}

impl Gaps<'_> {
    /// Penalties used when computing the gap states of grid cell `(i, j)` (1-based).
    #[inline]
    fn at(&self, i: usize, j: usize) -> (f64, f64) {
        match self {
            Gaps::Shared { open, extend } => (*open, *extend),
            Gaps::Cells(c) => (c.open[(i - 1, j - 1)], c.extend[(i - 1, j - 1)]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpTables {
    pub d: Matrix,
    pub ix: Matrix,
    pub iy: Matrix,
    pub score: f64,
    params: AlignmentParams,
    cell_gaps: Option<CellGaps>,
}

impl DpTables {
    /// `(T1, T2)` of the similarity matrix that produced these tables.
    pub fn dims(&self) -> (usize, usize) {
        (self.d.rows() - 1, self.d.cols() - 1)
    }

    /// Interior `D` cells as a `T1×T2` matrix.
    pub fn interior_d(&self) -> Matrix {
        let (t1, t2) = self.dims();
        Matrix::from_fn(t1, t2, |i, j| self.d[(i + 1, j + 1)])
    }

    pub fn params(&self) -> &AlignmentParams {
        &self.params
    }

    fn gaps(&self) -> Gaps<'_> {
        match &self.cell_gaps {
            Some(c) => Gaps::Cells(c),
            None => Gaps::Shared {
                open: self.params.gap_open,
                extend: self.params.gap_extend,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwGradients {
    /// `∂score/∂S`, also the expected alignment matrix.
    pub ds: Matrix,
    pub d_gap_open: f64,
    pub d_gap_extend: f64,
    /// Per-cell penalty gradients, present only when the forward pass used [`CellGaps`].
    pub d_cell_gaps: Option<CellGaps>,
}

impl SwGradients {
    pub fn expected_alignment(&self) -> &Matrix {
        &self.ds
    }
}

fn validate_scores(s: &Matrix) -> Result<()> {
    if s.rows() == 0 || s.cols() == 0 {
        return Err(Error::invalid("similarity matrix must be non-empty"));
    }
    if !s.all_finite() {
        return Err(Error::invalid("similarity matrix contains a non-finite entry"));
    }
    Ok(())
}

pub fn sw_forward(s: &Matrix, p: &AlignmentParams) -> Result<DpTables> {
    sw_forward_with_cell_gaps(s, p, None)
}

/// Forward pass with optional per-cell penalties overriding `p`'s shared ones.
pub fn sw_forward_with_cell_gaps(
    s: &Matrix,
    p: &AlignmentParams,
    cell_gaps: Option<&CellGaps>,
) -> Result<DpTables> {
    validate_scores(s)?;
    p.validate()?;
    if let Some(c) = cell_gaps {
        if c.open.shape() != s.shape() || c.extend.shape() != s.shape() {
            return Err(Error::shape("per-cell gap matrices must match the similarity matrix"));
        }
        if !(c.open.all_finite() && c.extend.all_finite()) || c.open.min() < 0.0 || c.extend.min() < 0.0 {
            return Err(Error::invalid("per-cell gap penalties must be finite and non-negative"));
        }
    }
    let gaps = match cell_gaps {
        Some(c) => Gaps::Cells(c),
        None => Gaps::Shared {
            open: p.gap_open,
            extend: p.gap_extend,
        },
    };
    let (t1, t2) = s.shape();
    let g = p.gamma;
    let mut d = Matrix::filled(t1 + 1, t2 + 1, NEG_INF);
    let mut ix = d.clone();
    let mut iy = d.clone();
    for i in 1..=t1 {
        for j in 1..=t2 {
            let (go, ge) = gaps.at(i, j);
            d[(i, j)] = s[(i - 1, j - 1)]
                + lse(&[0.0, d[(i - 1, j - 1)], ix[(i - 1, j - 1)], iy[(i - 1, j - 1)]], g);
            ix[(i, j)] = lse(&[d[(i, j - 1)] - go, ix[(i, j - 1)] - ge], g);
            iy[(i, j)] = lse(&[d[(i - 1, j)] - go, ix[(i - 1, j)] - go, iy[(i - 1, j)] - ge], g);
        }
    }
    let interior: Vec<f64> = (1..=t1)
        .flat_map(|i| (1..=t2).map(move |j| (i, j)))
        .map(|(i, j)| d[(i, j)])
        .collect();
    let score = lse(&interior, g);
    Ok(DpTables {
        d,
        ix,
        iy,
        score,
        params: *p,
        cell_gaps: cell_gaps.cloned(),
    })
}

/// Reverse-mode pass through every smooth-max node of the forward DP.
///
/// `seed_score` is the adjoint of the scalar score; `seed_d`, when given,
/// adds a per-cell adjoint on the interior `D` cells.
pub fn sw_backward(
    s: &Matrix,
    p: &AlignmentParams,
    tables: &DpTables,
    seed_score: f64,
    seed_d: Option<&Matrix>,
) -> Result<SwGradients> {
    let (t1, t2) = s.shape();
    if tables.dims() != (t1, t2) {
        return Err(Error::shape(format!(
            "tables are {:?} but similarity is {t1}x{t2}",
            tables.dims()
        )));
    }
    if let Some(sd) = seed_d {
        if sd.shape() != (t1, t2) {
            return Err(Error::shape(format!("D seed is {:?}, expected ({t1}, {t2})", sd.shape())));
        }
    }
    let fp = &tables.params;
    if fp.gamma != p.gamma || (tables.cell_gaps.is_none() && (fp.gap_open != p.gap_open || fp.gap_extend != p.gap_extend)) {
        return Err(Error::invalid("alignment parameters differ from the forward pass"));
    }
    let g = p.gamma;
    let gaps = tables.gaps();
    let (d, ix, iy) = (&tables.d, &tables.ix, &tables.iy);

    let mut ad = Matrix::zeros(t1 + 1, t2 + 1);
    let mut ax = Matrix::zeros(t1 + 1, t2 + 1);
    let mut ay = Matrix::zeros(t1 + 1, t2 + 1);
    for i in 1..=t1 {
        for j in 1..=t2 {
            let mut a = seed_score * weight(d[(i, j)], tables.score, g);
            if let Some(sd) = seed_d {
                a += sd[(i - 1, j - 1)];
            }
            ad[(i, j)] = a;
        }
    }

    let mut ds = Matrix::zeros(t1, t2);
    let mut d_go = 0.0;
    let mut d_ge = 0.0;
    let mut cell_grads = tables
        .cell_gaps
        .as_ref()
        .map(|_| (Matrix::zeros(t1, t2), Matrix::zeros(t1, t2)));

    // Consumers of cell (i, j) sit at (i, j+1), (i+1, j) and (i+1, j+1), so a
    // reverse row-major sweep sees every adjoint complete before it is used.
    for i in (1..=t1).rev() {
        for j in (1..=t2).rev() {
            let (go, ge) = gaps.at(i, j);

            let a = ad[(i, j)];
            if a != 0.0 {
                ds[(i - 1, j - 1)] += a;
                let preds = [d[(i - 1, j - 1)], ix[(i - 1, j - 1)], iy[(i - 1, j - 1)]];
                let v = lse(&[0.0, preds[0], preds[1], preds[2]], g);
                ad[(i - 1, j - 1)] += a * weight(preds[0], v, g);
                ax[(i - 1, j - 1)] += a * weight(preds[1], v, g);
                ay[(i - 1, j - 1)] += a * weight(preds[2], v, g);
            }

            let b = ax[(i, j)];
            if b != 0.0 {
                let v = ix[(i, j)];
                let w_open = weight(d[(i, j - 1)] - go, v, g);
                let w_ext = weight(ix[(i, j - 1)] - ge, v, g);
                ad[(i, j - 1)] += b * w_open;
                ax[(i, j - 1)] += b * w_ext;
                d_go -= b * w_open;
                d_ge -= b * w_ext;
                if let Some((co, ce)) = cell_grads.as_mut() {
                    co[(i - 1, j - 1)] -= b * w_open;
                    ce[(i - 1, j - 1)] -= b * w_ext;
                }
            }

            let c = ay[(i, j)];
            if c != 0.0 {
                let v = iy[(i, j)];
                let w_d = weight(d[(i - 1, j)] - go, v, g);
                let w_x = weight(ix[(i - 1, j)] - go, v, g);
                let w_y = weight(iy[(i - 1, j)] - ge, v, g);
                ad[(i - 1, j)] += c * w_d;
                ax[(i - 1, j)] += c * w_x;
                ay[(i - 1, j)] += c * w_y;
                d_go -= c * (w_d + w_x);
                d_ge -= c * w_y;
                if let Some((co, ce)) = cell_grads.as_mut() {
                    co[(i - 1, j - 1)] -= c * (w_d + w_x);
                    ce[(i - 1, j - 1)] -= c * w_y;
                }
            }
        }
    }

    Ok(SwGradients {
        ds,
        d_gap_open: d_go,
        d_gap_extend: d_ge,
        d_cell_gaps: cell_grads.map(|(open, extend)| CellGaps { open, extend }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Match,
    GapX,
    GapY,
}

/// One step of a hard alignment; `(i, j)` index the similarity matrix (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedCell {
    pub i: usize,
    pub j: usize,
    pub step: Move,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardAlignment {
    pub score: f64,
    pub path: Vec<AlignedCell>,
    pub start: (usize, usize),
    pub end: (usize, usize),
}

/// Exact-max Smith-Waterman over the same three-state recursions, with
/// traceback from the best `D` cell back to the restart.
///
/// Ties go to restart, then `D`, then `Ix`, then `Iy`; among equally scoring
/// end cells the first in row-major order wins.
pub fn sw_hard(s: &Matrix, gap_open: f64, gap_extend: f64) -> Result<HardAlignment> {
    validate_scores(s)?;
    if !(gap_open.is_finite() && gap_extend.is_finite()) {
        return Err(Error::invalid("gap penalties must be finite"));
    }
    let (t1, t2) = s.shape();
    let mut d = Matrix::filled(t1 + 1, t2 + 1, NEG_INF);
    let mut ix = d.clone();
    let mut iy = d.clone();
    // 0 = restart, 1 = D, 2 = Ix, 3 = Iy
    let mut pd = vec![0u8; (t1 + 1) * (t2 + 1)];
    let mut px = pd.clone();
    let mut py = pd.clone();
    let at = |i: usize, j: usize| i * (t2 + 1) + j;

    fn argmax(cands: &[(u8, f64)]) -> (u8, f64) {
        let mut best = cands[0];
        for &c in &cands[1..] {
            if c.1 > best.1 {
                best = c;
            }
        }
        best
    }

    let mut best_end = (1, 1);
    for i in 1..=t1 {
        for j in 1..=t2 {
            let (k, v) = argmax(&[
                (0, 0.0),
                (1, d[(i - 1, j - 1)]),
                (2, ix[(i - 1, j - 1)]),
                (3, iy[(i - 1, j - 1)]),
            ]);
            d[(i, j)] = s[(i - 1, j - 1)] + v;
            pd[at(i, j)] = k;
            let (k, v) = argmax(&[(1, d[(i, j - 1)] - gap_open), (2, ix[(i, j - 1)] - gap_extend)]);
            ix[(i, j)] = v;
            px[at(i, j)] = k;
            let (k, v) = argmax(&[
                (1, d[(i - 1, j)] - gap_open),
                (2, ix[(i - 1, j)] - gap_open),
                (3, iy[(i - 1, j)] - gap_extend),
            ]);
            iy[(i, j)] = v;
            py[at(i, j)] = k;
            if d[(i, j)] > d[best_end] {
                best_end = (i, j);
            }
        }
    }

    let (mut i, mut j) = best_end;
    let mut state = 1u8;
    let mut path = Vec::new();
    loop {
        match state {
            1 => {
                path.push(AlignedCell { i: i - 1, j: j - 1, step: Move::Match });
                let k = pd[at(i, j)];
                if k == 0 {
                    break;
                }
                state = k;
                i -= 1;
                j -= 1;
            }
            2 => {
                path.push(AlignedCell { i: i - 1, j: j - 1, step: Move::GapX });
                state = px[at(i, j)];
                j -= 1;
            }
            _ => {
                path.push(AlignedCell { i: i - 1, j: j - 1, step: Move::GapY });
                state = py[at(i, j)];
                i -= 1;
            }
        }
    }
    path.reverse();
    let first = path[0];
    Ok(HardAlignment {
        score: d[best_end],
        start: (first.i, first.j),
        end: (best_end.0 - 1, best_end.1 - 1),
        path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Hard,
    Smooth,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    D,
    Ix,
    Iy,
}

/// Score of every legal alignment path of the three-state machine: each path
/// starts with a restart in some `D` cell and ends in a `D` cell.
pub fn sw_path_scores(s: &Matrix, p: &AlignmentParams) -> Result<Vec<f64>> {
    sw_path_scores_with_cell_gaps(s, p, None)
}

pub fn sw_path_scores_with_cell_gaps(
    s: &Matrix,
    p: &AlignmentParams,
    cell_gaps: Option<&CellGaps>,
) -> Result<Vec<f64>> {
    validate_scores(s)?;
    let (t1, t2) = s.shape();
    if t1 * t2 > MAX_ENUMERATION_CELLS {
        return Err(Error::invalid(format!(
            "path enumeration limited to {MAX_ENUMERATION_CELLS} cells, got {t1}x{t2}"
        )));
    }
    let gaps = match cell_gaps {
        Some(c) => Gaps::Cells(c),
        None => Gaps::Shared {
            open: p.gap_open,
            extend: p.gap_extend,
        },
    };

    struct Walker<'a> {
        s: &'a Matrix,
        gaps: Gaps<'a>,
        out: Vec<f64>,
    }

    impl Walker<'_> {
        fn walk(&mut self, state: State, i: usize, j: usize, score: f64) {
            let (t1, t2) = self.s.shape();
            if state == State::D {
                self.out.push(score);
            }
            if i < t1 && j < t2 {
                self.walk(State::D, i + 1, j + 1, score + self.s[(i, j)]);
            }
            if j < t2 && state != State::Iy {
                let (go, ge) = self.gaps.at(i, j + 1);
                let pen = if state == State::D { go } else { ge };
                self.walk(State::Ix, i, j + 1, score - pen);
            }
            if i < t1 {
                let (go, ge) = self.gaps.at(i + 1, j);
                let pen = if state == State::Iy { ge } else { go };
                self.walk(State::Iy, i + 1, j, score - pen);
            }
        }
    }

    let mut w = Walker {
        s,
        gaps,
        out: Vec::new(),
    };
    for i in 1..=t1 {
        for j in 1..=t2 {
            w.walk(State::D, i, j, s[(i - 1, j - 1)]);
        }
    }
    Ok(w.out)
}

/// Brute-force aggregate over all alignment paths; the oracle for
/// [`sw_forward`] (smooth) and [`sw_hard`] (hard).
pub fn sw_enumerate_paths(s: &Matrix, p: &AlignmentParams, mode: Aggregation) -> Result<f64> {
    p.validate()?;
    let scores = sw_path_scores(s, p)?;
    Ok(match mode {
        Aggregation::Hard => scores.iter().copied().fold(NEG_INF, f64::max),
        Aggregation::Smooth => lse(&scores, p.gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(gamma: f64, go: f64, ge: f64) -> AlignmentParams {
        AlignmentParams::new(gamma, go, ge).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn single_cell() {
        let s = Matrix::from_rows(&[[2.0]]).unwrap();
        let p = params(0.8, 1.0, 0.1);
        let t = sw_forward(&s, &p).unwrap();
        assert_eq!(t.d[(1, 1)], 2.0);
        assert_eq!(t.score, 2.0);
        assert_eq!(t.ix[(1, 1)], NEG_INF);
        let g = sw_backward(&s, &p, &t, 1.0, None).unwrap();
        assert_eq!(g.ds.to_rows(), vec![vec![1.0]]);
        assert_eq!(g.d_gap_open, 0.0);
        assert_eq!(g.d_gap_extend, 0.0);
        let h = sw_hard(&s, 1.0, 0.1).unwrap();
        assert_eq!(h.score, 2.0);
        assert_eq!(h.path, vec![AlignedCell { i: 0, j: 0, step: Move::Match }]);
        for mode in [Aggregation::Hard, Aggregation::Smooth] {
            assert_eq!(sw_enumerate_paths(&s, &p, mode).unwrap(), 2.0);
        }
    }

    #[test]
    fn boundaries_are_sentinels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_matrix(&mut rng, 3, 4);
        let t = sw_forward(&s, &params(0.8, 1.0, 0.1)).unwrap();
        for m in [&t.d, &t.ix, &t.iy] {
            for j in 0..5 {
                assert_eq!(m[(0, j)], NEG_INF);
            }
            for i in 0..4 {
                assert_eq!(m[(i, 0)], NEG_INF);
            }
        }
        assert!(t.interior_d().all_finite());
        assert!((t.score - crate::smoothops::lse(t.interior_d().as_slice(), 0.8)).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_diagonal_dominates() {
        let s = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let p = params(0.05, 0.5, 0.1);
        let t = sw_forward(&s, &p).unwrap();
        let oracle = sw_enumerate_paths(&s, &p, Aggregation::Smooth).unwrap();
        assert!((t.score - oracle).abs() < 1e-9);
        assert!((t.score - 2.0).abs() < 0.01);
    }

    #[test]
    fn all_negative_picks_best_single_cell() {
        let s = Matrix::filled(3, 3, -1.0);
        let h = sw_hard(&s, 1.0, 0.1).unwrap();
        assert_eq!(h.score, -1.0);
        assert_eq!(h.path.len(), 1);
    }

    #[test]
    fn hard_matches_enumeration_on_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let s = random_matrix(&mut rng, 5, 5);
            let p = params(0.8, 0.4, 0.1);
            let h = sw_hard(&s, 0.4, 0.1).unwrap();
            let e = sw_enumerate_paths(&s, &p, Aggregation::Hard).unwrap();
            assert!((h.score - e).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_path_recomputes_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let s = random_matrix(&mut rng, 8, 8);
            let (go, ge) = (0.3, 0.05);
            let h = sw_hard(&s, go, ge).unwrap();
            let mut total = 0.0;
            let mut prev: Option<AlignedCell> = None;
            for c in &h.path {
                match c.step {
                    Move::Match => total += s[(c.i, c.j)],
                    Move::GapX | Move::GapY => {
                        let extending = prev.is_some_and(|p| p.step == c.step);
                        total -= if extending { ge } else { go };
                    }
                }
                if let Some(p) = prev {
                    assert!(c.i >= p.i && c.j >= p.j && (c.i, c.j) != (p.i, p.j));
                    match c.step {
                        Move::Match => assert_eq!((c.i, c.j), (p.i + 1, p.j + 1)),
                        Move::GapX => assert_eq!((c.i, c.j), (p.i, p.j + 1)),
                        Move::GapY => assert_eq!((c.i, c.j), (p.i + 1, p.j)),
                    }
                }
                prev = Some(*c);
            }
            assert_eq!(h.path.first().unwrap().step, Move::Match);
            assert_eq!(h.path.last().unwrap().step, Move::Match);
            assert!((total - h.score).abs() < 1e-12);
        }
    }

    #[test]
    fn small_gamma_close_to_hard() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_matrix(&mut rng, 6, 6);
        let p = params(1e-3, 1.0, 0.1);
        let soft = sw_forward(&s, &p).unwrap().score;
        let hard = sw_hard(&s, 1.0, 0.1).unwrap().score;
        assert!(soft >= hard && soft - hard <= 0.05);
    }

    fn fd_check(s: &Matrix, p: &AlignmentParams, seed_d: Option<&Matrix>, seed_score: f64) {
        let t = sw_forward(s, p).unwrap();
        let g = sw_backward(s, p, &t, seed_score, seed_d).unwrap();
        let objective = |s: &Matrix, p: &AlignmentParams| {
            let t = sw_forward(s, p).unwrap();
            let mut v = seed_score * t.score;
            if let Some(sd) = seed_d {
                v += sd.as_slice().iter().zip(t.interior_d().as_slice()).map(|(a, b)| a * b).sum::<f64>();
            }
            v
        };
        let h = 1e-6;
        for i in 0..s.rows() {
            for j in 0..s.cols() {
                let mut up = s.clone();
                let mut dn = s.clone();
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                let fd = (objective(&up, p) - objective(&dn, p)) / (2.0 * h);
                assert!(close(fd, g.ds[(i, j)], 1e-4), "dS[{i}][{j}] fd={fd} an={}", g.ds[(i, j)]);
            }
        }
        let mut up = *p;
        let mut dn = *p;
        up.gap_open += h;
        dn.gap_open -= h;
        let fd = (objective(s, &up) - objective(s, &dn)) / (2.0 * h);
        assert!(close(fd, g.d_gap_open, 1e-4), "go fd={fd} an={}", g.d_gap_open);
        let mut up = *p;
        let mut dn = *p;
        up.gap_extend += h;
        dn.gap_extend -= h;
        let fd = (objective(s, &up) - objective(s, &dn)) / (2.0 * h);
        assert!(close(fd, g.d_gap_extend, 1e-4), "ge fd={fd} an={}", g.d_gap_extend);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_matrix(&mut rng, 5, 7);
        fd_check(&s, &params(0.8, 1.0, 0.1), None, 1.0);
    }

    #[test]
    fn seed_d_paths_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_matrix(&mut rng, 4, 5);
        let mut one_hot = Matrix::zeros(4, 5);
        one_hot[(2, 3)] = 1.0;
        fd_check(&s, &params(0.8, 0.6, 0.2), Some(&one_hot), 0.0);
        let dense = random_matrix(&mut rng, 4, 5);
        fd_check(&s, &params(0.5, 0.6, 0.2), Some(&dense), -0.7);
    }

    #[test]
    fn cell_gaps_match_shared_and_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_matrix(&mut rng, 4, 4);
        let p = params(0.8, 0.7, 0.2);
        let shared = CellGaps {
            open: Matrix::filled(4, 4, 0.7),
            extend: Matrix::filled(4, 4, 0.2),
        };
        let a = sw_forward(&s, &p).unwrap();
        let b = sw_forward_with_cell_gaps(&s, &p, Some(&shared)).unwrap();
        assert!((a.score - b.score).abs() < 1e-12);
        let gb = sw_backward(&s, &p, &b, 1.0, None).unwrap();
        let ga = sw_backward(&s, &p, &a, 1.0, None).unwrap();
        let cells = gb.d_cell_gaps.as_ref().unwrap();
        assert!((cells.open.sum() - ga.d_gap_open).abs() < 1e-10);
        assert!((cells.extend.sum() - ga.d_gap_extend).abs() < 1e-10);

        let varied = CellGaps {
            open: Matrix::from_fn(4, 4, |_, _| rng.random_range(0.3..1.2)),
            extend: Matrix::from_fn(4, 4, |_, _| rng.random_range(0.0..0.3)),
        };
        let t = sw_forward_with_cell_gaps(&s, &p, Some(&varied)).unwrap();
        let scores = sw_path_scores_with_cell_gaps(&s, &p, Some(&varied)).unwrap();
        assert!((t.score - lse(&scores, 0.8)).abs() < 1e-9);
        let g = sw_backward(&s, &p, &t, 1.0, None).unwrap();
        let h = 1e-6;
        let grads = g.d_cell_gaps.unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut up = varied.clone();
                let mut dn = varied.clone();
                up.open[(i, j)] += h;
                dn.open[(i, j)] -= h;
                let fd = (sw_forward_with_cell_gaps(&s, &p, Some(&up)).unwrap().score
                    - sw_forward_with_cell_gaps(&s, &p, Some(&dn)).unwrap().score)
                    / (2.0 * h);
                assert!(close(fd, grads.open[(i, j)], 1e-4));
            }
        }
    }

    #[test]
    fn shape_and_param_mismatch_rejected() {
        let s = Matrix::filled(2, 2, 0.5);
        let p = params(0.8, 1.0, 0.1);
        let t = sw_forward(&s, &p).unwrap();
        assert!(sw_backward(&Matrix::filled(2, 3, 0.5), &p, &t, 1.0, None).is_err());
        assert!(sw_backward(&s, &p, &t, 1.0, Some(&Matrix::zeros(3, 3))).is_err());
        assert!(sw_backward(&s, &params(0.5, 1.0, 0.1), &t, 1.0, None).is_err());
        let bad = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(sw_forward(&bad, &p).is_err());
        assert!(sw_enumerate_paths(&Matrix::zeros(5, 6), &p, Aggregation::Hard).is_err());
    }

    #[test]
    fn gap_free_transpose_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = Matrix::from_fn(5, 5, |i, j| if i == j { 3.0 } else { rng.random_range(-2.0..-1.0) });
        let p = params(0.3, 40.0, 30.0);
        let a = sw_forward(&s, &p).unwrap().score;
        let b = sw_forward(&s.transpose(), &p).unwrap().score;
        assert!((a - b).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semiring_equivalence(seed in 0u64..10_000, t1 in 1usize..=5, t2 in 1usize..=5, gi in 0usize..3) {
            prop_assume!(t1 * t2 <= MAX_ENUMERATION_CELLS);
            let gamma = [0.3, 0.8, 2.0][gi];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, t1, t2);
            let go: f64 = rng.random_range(0.0..1.5);
            let ge = rng.random_range(0.0..go.max(1e-9));
            let p = params(gamma, go, ge);
            let fwd = sw_forward(&s, &p).unwrap().score;
            let orc = sw_enumerate_paths(&s, &p, Aggregation::Smooth).unwrap();
            prop_assert!((fwd - orc).abs() <= 1e-9 * orc.abs().max(1.0));
        }

        #[test]
        fn hard_equals_enumeration_3x3(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, 3, 3);
            let p = params(0.8, 0.5, 0.2);
            let h = sw_hard(&s, 0.5, 0.2).unwrap().score;
            prop_assert_eq!(h, sw_enumerate_paths(&s, &p, Aggregation::Hard).unwrap());
        }

        #[test]
        fn convergence_bound(seed in 0u64..10_000, t1 in 1usize..=5, t2 in 1usize..=5, gamma in 1e-3f64..0.5) {
            prop_assume!(t1 * t2 <= MAX_ENUMERATION_CELLS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, t1, t2);
            let p = params(gamma, 0.5, 0.1);
            let n_paths = sw_path_scores(&s, &p).unwrap().len() as f64;
            let diff = sw_forward(&s, &p).unwrap().score - sw_hard(&s, 0.5, 0.1).unwrap().score;
            prop_assert!(diff >= -1e-12 && diff <= gamma * n_paths.ln() + 1e-12);
        }

        #[test]
        fn gradient_signs_and_completeness(seed in 0u64..10_000, t1 in 1usize..7, t2 in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_matrix(&mut rng, t1, t2);
            let p = params(0.8, 1.0, 0.1);
            let t = sw_forward(&s, &p).unwrap();
            let g = sw_backward(&s, &p, &t, 1.0, None).unwrap();
            prop_assert!(g.ds.as_slice().iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!(g.d_gap_open <= 0.0 && g.d_gap_extend <= 0.0);
            let h = 1e-6;
            let up = s.map(|v| v + h);
            let dn = s.map(|v| v - h);
            let fd = (sw_forward(&up, &p).unwrap().score - sw_forward(&dn, &p).unwrap().score) / (2.0 * h);
            prop_assert!(close(fd, g.ds.sum(), 1e-4));
        }
    }
}
