//! Linear 2-D cross-correlation through zero-padded real FFTs.
//!
//! The reference spectrum is stored column-major: for each of the
//! `pad_cols / 2 + 1` half-spectrum columns, `pad_rows` contiguous complex
//! values. It is computed once and reused for every query of the same shape.
//! Per query, the column transforms run on groups of [`COLS_PER_TASK`]
//! columns and leave their output rows group by group, so that the final row
//! transforms read short contiguous runs instead of one value per column.
//!
//! The correlator is generic over the working precision. Scores that are
//! compared against direct sums use `f64`; the large mosaic of the global
//! search runs in `f32`, which only has to rank candidates.

use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::num_traits::{Float, Zero};
use rustfft::{Fft, FftNum, FftPlanner};

use crate::grid::Grid;

/// Rows handled per task when moving data between row and column layout.
const ROW_BLOCK: usize = 32;
/// Spectrum columns handled per task in the column stage, and the width of
/// one group of the intermediate layout.
const COLS_PER_TASK: usize = 8;

/// Floating-point types the correlator can run in.
pub trait Real: FftNum + Float {
    fn widen(self) -> f64;
}

impl Real for f32 {
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn widen(self) -> f64 {
        self
    }
}

/// Smallest even length `>= n` whose only prime factors are 2, 3, 5 and 7.
pub fn efficient_len(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        if m.is_multiple_of(2) {
            let mut r = m;
            for p in [2, 3, 5, 7] {
                while r.is_multiple_of(p) {
                    r /= p;
                }
            }
            if r == 1 {
                return m;
            }
        }
        m += 1;
    }
}

struct Plans<T: Real> {
    row_fwd: Arc<dyn RealToComplex<T>>,
    row_inv: Arc<dyn ComplexToReal<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Clone for Plans<T> {
    fn clone(&self) -> Self {
        Self {
            row_fwd: Arc::clone(&self.row_fwd),
            row_inv: Arc::clone(&self.row_inv),
            col_fwd: Arc::clone(&self.col_fwd),
            col_inv: Arc::clone(&self.col_inv),
        }
    }
}

type PlanCache = HashMap<(TypeId, usize, usize), Box<dyn Any + Send>>;

fn plans_for<T: Real>(rows: usize, cols: usize) -> Plans<T> {
    static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((TypeId::of::<T>(), rows, cols))
        .or_insert_with(|| {
            let mut real = RealFftPlanner::<T>::new();
            let mut cplx = FftPlanner::<T>::new();
            Box::new(Plans {
                row_fwd: real.plan_fft_forward(cols),
                row_inv: real.plan_fft_inverse(cols),
                col_fwd: cplx.plan_fft_forward(rows),
                col_inv: cplx.plan_fft_inverse(rows),
            })
        })
        .downcast_ref::<Plans<T>>()
        .expect("cache entries are keyed by type")
        .clone()
}

/// Reusable buffer for [`SpectralCorrelator::correlate_into`]: the column
/// stage output, one `rows × COLS_PER_TASK` block per column group.
pub struct Workspace<T: Real = f64> {
    spec: Vec<Complex<T>>,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Self { spec: Vec::new() }
    }
}

impl<T: Real> Default for Workspace<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-task buffers of the output stage.
struct RowScratch<T: Real> {
    half: Vec<Complex<T>>,
    real: Vec<T>,
    fft: Vec<Complex<T>>,
    rows: Vec<f64>,
}

/// A reference grid transformed once, ready to be correlated against any
/// number of queries of one fixed shape.
pub struct SpectralCorrelator<T: Real = f64> {
    ref_shape: (usize, usize),
    query_shape: (usize, usize),
    pad_rows: usize,
    pad_cols: usize,
    spectrum: Vec<Complex<T>>,
    plans: Plans<T>,
    /// Padded column of output column 0; output columns run on from there,
    /// wrapping once past the end of the padded row.
    col_start: usize,
}

impl<T: Real> SpectralCorrelator<T> {
    pub fn new(reference: &Grid, query_shape: (usize, usize)) -> Self {
        let (hr, wr) = reference.shape();
        let (hq, wq) = query_shape;
        let pad_rows = efficient_len(hr + hq.max(1) - 1);
        let pad_cols = efficient_len(wr + wq.max(1) - 1);
        let mut this = Self {
            ref_shape: (hr, wr),
            query_shape,
            pad_rows,
            pad_cols,
            spectrum: Vec::new(),
            plans: plans_for::<T>(pad_rows, pad_cols),
            col_start: (-((wq / 2) as isize)).rem_euclid(pad_cols as isize) as usize,
        };
        this.spectrum = this.forward(reference);
        this
    }

    pub fn reference_shape(&self) -> (usize, usize) {
        self.ref_shape
    }

    pub fn query_shape(&self) -> (usize, usize) {
        self.query_shape
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        (self.pad_rows, self.pad_cols)
    }

    fn spec_cols(&self) -> usize {
        self.pad_cols / 2 + 1
    }

    /// Half-spectra of the rows of `g`, zero-padded to `pad_cols`, row-major.
    fn row_spectra(&self, g: &Grid) -> Vec<Complex<T>> {
        let sc = self.spec_cols();
        let mut out = vec![Complex::zero(); g.rows() * sc];
        out.par_chunks_mut(ROW_BLOCK * sc)
            .enumerate()
            .for_each(|(b, block)| {
                let mut input = self.plans.row_fwd.make_input_vec();
                let mut scratch = self.plans.row_fwd.make_scratch_vec();
                for (k, dst) in block.chunks_mut(sc).enumerate() {
                    let row = g.row(b * ROW_BLOCK + k);
                    for (d, &v) in input.iter_mut().zip(row) {
                        *d = T::from_f64(v).unwrap_or_else(T::zero);
                    }
                    input[row.len()..].fill(T::zero());
                    self.plans
                        .row_fwd
                        .process_with_scratch(&mut input, dst, &mut scratch)
                        .expect("real fft sizes");
                }
            });
        out
    }

    /// Zero-padded forward transform of `g`, column-major.
    fn forward(&self, g: &Grid) -> Vec<Complex<T>> {
        let (pr, sc) = (self.pad_rows, self.spec_cols());
        let rows = self.row_spectra(g);
        let mut spec = vec![Complex::zero(); pr * sc];
        let fft = &self.plans.col_fwd;
        spec.par_chunks_mut(pr * COLS_PER_TASK).enumerate().for_each_init(
            || vec![Complex::zero(); fft.get_inplace_scratch_len()],
            |scratch, (b, chunk)| {
                for (k, col) in chunk.chunks_mut(pr).enumerate() {
                    let c = b * COLS_PER_TASK + k;
                    for (i, v) in col[..g.rows()].iter_mut().enumerate() {
                        *v = rows[i * sc + c];
                    }
                    fft.process_with_scratch(col, scratch);
                }
            },
        );
        spec
    }

    pub fn correlate(&self, query: &Grid) -> Grid {
        let mut out = Grid::zeros(self.ref_shape.0, self.ref_shape.1);
        self.correlate_into(query, &mut Workspace::new(), &mut out);
        out
    }

    /// Correlates `query` (placed by its center cell) against the prepared
    /// reference; `out` receives one score per reference cell.
    ///
    /// Panics if `query` or `out` have the wrong shape.
    pub fn correlate_into(&self, query: &Grid, work: &mut Workspace<T>, out: &mut Grid) {
        assert_eq!(out.shape(), self.ref_shape, "output shape");
        self.column_stage(query, work);
        let wr = self.ref_shape.1;
        let spec: &[Complex<T>] = &work.spec;
        out.as_mut_slice()
            .par_chunks_mut(ROW_BLOCK * wr)
            .enumerate()
            .for_each_init(|| self.row_scratch(), |scratch, (b, rows)| {
                self.output_block(spec, b, rows, scratch)
            });
    }

    /// Like [`correlate_into`](Self::correlate_into) but streams the output
    /// instead of storing it: rows are produced in blocks, each block folds
    /// its rows in order into a fresh accumulator from `init`, and the
    /// accumulators are returned in block order.
    pub fn correlate_fold<A: Send>(
        &self,
        query: &Grid,
        work: &mut Workspace<T>,
        init: impl Fn() -> A + Sync,
        visit: impl Fn(&mut A, usize, &[f64]) + Sync,
    ) -> Vec<A> {
        self.column_stage(query, work);
        let (hr, wr) = self.ref_shape;
        let spec: &[Complex<T>] = &work.spec;
        (0..hr.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .map_init(
                || self.row_scratch(),
                |scratch, b| {
                    let n = ROW_BLOCK.min(hr - b * ROW_BLOCK);
                    let mut rows = std::mem::take(&mut scratch.rows);
                    rows.resize(n * wr, 0.0);
                    self.output_block(spec, b, &mut rows, scratch);
                    let mut acc = init();
                    for (k, row) in rows.chunks(wr).enumerate() {
                        visit(&mut acc, b * ROW_BLOCK + k, row);
                    }
                    scratch.rows = rows;
                    acc
                },
            )
            .collect()
    }

    /// Row spectra of the query, then per column: forward transform,
    /// multiplication by the conjugated query, inverse transform. Only the
    /// rows that reach the output are kept, already in output order.
    fn column_stage(&self, query: &Grid, work: &mut Workspace<T>) {
        assert_eq!(query.shape(), self.query_shape, "query shape");
        let (pr, sc) = (self.pad_rows, self.spec_cols());
        let (hq, hr) = (query.rows(), self.ref_shape.0);
        let ci = (hq / 2) as isize;
        let rows = self.row_spectra(query);
        let spec = &mut work.spec;
        spec.resize(sc.div_ceil(COLS_PER_TASK) * hr * COLS_PER_TASK, Complex::zero());
        let (fwd, inv) = (&self.plans.col_fwd, &self.plans.col_inv);
        spec.par_chunks_mut(hr * COLS_PER_TASK).enumerate().for_each_init(
            || {
                let n = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
                (vec![Complex::zero(); n], vec![Complex::zero(); pr * COLS_PER_TASK])
            },
            |(scratch, cols), (g, block)| {
                let width = COLS_PER_TASK.min(sc - g * COLS_PER_TASK);
                for (k, col) in cols.chunks_mut(pr).take(width).enumerate() {
                    let c = g * COLS_PER_TASK + k;
                    for (i, v) in col[..hq].iter_mut().enumerate() {
                        *v = rows[i * sc + c];
                    }
                    col[hq..].fill(Complex::zero());
                    fwd.process_with_scratch(col, scratch);
                    let reference = &self.spectrum[c * pr..(c + 1) * pr];
                    for (a, r) in col.iter_mut().zip(reference) {
                        *a = a.conj() * r;
                    }
                    inv.process_with_scratch(col, scratch);
                }
                for (i, dst) in block.chunks_mut(COLS_PER_TASK).enumerate() {
                    let s = (i as isize - ci).rem_euclid(pr as isize) as usize;
                    for (k, d) in dst[..width].iter_mut().enumerate() {
                        *d = cols[k * pr + s];
                    }
                }
            },
        );
    }

    fn row_scratch(&self) -> RowScratch<T> {
        RowScratch {
            half: vec![Complex::zero(); ROW_BLOCK * self.spec_cols()],
            real: self.plans.row_inv.make_output_vec(),
            fft: self.plans.row_inv.make_scratch_vec(),
            rows: Vec::new(),
        }
    }

    /// Output rows `b·ROW_BLOCK..` into `dst`: gathers them out of the
    /// grouped layout, inverts each along the row and undoes the centering.
    fn output_block(&self, spec: &[Complex<T>], b: usize, dst: &mut [f64], scratch: &mut RowScratch<T>) {
        let (pr, pc, sc) = (self.pad_rows, self.pad_cols, self.spec_cols());
        let (hr, wr) = self.ref_shape;
        let scale = 1.0 / (pr * pc) as f64;
        let i0 = b * ROW_BLOCK;
        let n = dst.len() / wr;
        let half = &mut scratch.half;
        for (g, group) in spec.chunks(hr * COLS_PER_TASK).enumerate() {
            let c0 = g * COLS_PER_TASK;
            let width = COLS_PER_TASK.min(sc - c0);
            let src = &group[i0 * COLS_PER_TASK..(i0 + n) * COLS_PER_TASK];
            for (k, run) in src.chunks(COLS_PER_TASK).enumerate() {
                half[k * sc + c0..k * sc + c0 + width].copy_from_slice(&run[..width]);
            }
        }
        let nyquist = pc % 2 == 0;
        for (h, row) in half.chunks_mut(sc).zip(dst.chunks_mut(wr)) {
            // imaginary parts here are rounding noise
            h[0].im = T::zero();
            if nyquist {
                h[sc - 1].im = T::zero();
            }
            self.plans
                .row_inv
                .process_with_scratch(h, &mut scratch.real, &mut scratch.fft)
                .expect("real ifft sizes");
            let wrap = (pc - self.col_start).min(wr);
            let (head, tail) = row.split_at_mut(wrap);
            for (d, &v) in head.iter_mut().zip(&scratch.real[self.col_start..]) {
                *d = v.widen() * scale;
            }
            for (d, &v) in tail.iter_mut().zip(&scratch.real[..]) {
                *d = v.widen() * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn efficient_lengths() {
        assert_eq!(efficient_len(1), 2);
        assert_eq!(efficient_len(15), 16);
        assert_eq!(efficient_len(239), 240);
        assert_eq!(efficient_len(2399), 2400);
        assert_eq!(efficient_len(11), 12);
        assert_eq!(efficient_len(13), 14);
    }

    #[test]
    fn single_cell() {
        let r = Grid::from_rows(&[vec![1.0]]).unwrap();
        let c = SpectralCorrelator::<f64>::new(&r, (1, 1));
        let s = c.correlate(&r);
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn workspace_reuse_is_clean() {
        let r = Grid::from_vec(5, 7, (0..35).map(|v| v as f64).collect()).unwrap();
        let q1 = Grid::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let q2 = Grid::from_vec(3, 3, vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let c = SpectralCorrelator::<f64>::new(&r, (3, 3));
        let mut work = Workspace::new();
        let mut out = Grid::zeros(5, 7);
        c.correlate_into(&q1, &mut work, &mut out);
        c.correlate_into(&q2, &mut work, &mut out);
        let expect = r.map(|v| 2.0 * v);
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn fold_visits_every_row_in_order() {
        let r = Grid::from_vec(70, 9, (0..630).map(|v| (v % 17) as f64).collect()).unwrap();
        let q = Grid::from_vec(3, 3, (0..9).map(|v| v as f64 - 4.0).collect()).unwrap();
        let c = SpectralCorrelator::<f64>::new(&r, (3, 3));
        let full = c.correlate(&q);
        let blocks = c.correlate_fold(&q, &mut Workspace::new(), Vec::new, |acc, i, row| {
            acc.push((i, row.to_vec()))
        });
        let rows: Vec<(usize, Vec<f64>)> = blocks.into_iter().flatten().collect();
        assert_eq!(rows.len(), 70);
        for (k, (i, row)) in rows.iter().enumerate() {
            assert_eq!(*i, k);
            assert_eq!(row.as_slice(), full.row(k));
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let r = Grid::from_vec(40, 50, (0..2000).map(|v| ((v * 37) % 11) as f64 / 11.0).collect())
            .unwrap();
        let q = Grid::from_vec(9, 9, (0..81).map(|v| ((v * 13) % 5) as f64 - 2.0).collect())
            .unwrap();
        let a = SpectralCorrelator::<f64>::new(&r, (9, 9)).correlate(&q);
        let b = SpectralCorrelator::<f32>::new(&r, (9, 9)).correlate(&q);
        assert!(a.max_abs_diff(&b).unwrap() < 1e-4 * (1.0 + a.max_abs()));
    }
}
