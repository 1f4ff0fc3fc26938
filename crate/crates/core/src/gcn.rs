//! Two-layer GCN over the integrated correlation tensor, and the label
//! similarity heatmap derived from its output.

use rand::Rng;

use crate::error::{KrfError, Result};
use crate::tensor::{ParamStore, ParamVars, Tape, Tensor, Var};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnDims {
    /// Initial label-embedding width.
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Sum of the two slices of a `[2, C, C]` tensor.
pub fn combined_adjacency(tape: &mut Tape, a_int: Var) -> Result<Var> {
    let s = tape.shape(a_int);
    if s.len() != 3 || s[0] != 2 || s[1] != s[2] {
        return Err(KrfError::shape("combined_adjacency", s, &[2, s.get(1).copied().unwrap_or(0), s.get(1).copied().unwrap_or(0)]));
    }
    let stat = tape.select(a_int, 0, 0)?;
    let know = tape.select(a_int, 0, 1)?;
    tape.add(stat, know)
}

fn propagate(tape: &mut Tape, adj: Var, h: Var, w: Var, slope: f64) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let ahw = tape.matmul(adj, hw)?;
    Ok(tape.leaky_relu(ahw, slope))
}

/// `H' = LeakyReLU((A[0] + A[1])·H·W)`.
pub fn gcn_layer(tape: &mut Tape, a_int: Var, h: Var, w: Var, slope: f64) -> Result<Var> {
    let adj = combined_adjacency(tape, a_int)?;
    propagate(tape, adj, h, w, slope)
}

/// `H² = gcn(A, gcn(A, H⁰, W¹), W²)` using `gcn.h0`, `gcn.w1`, `gcn.w2`.
pub fn style_representations(tape: &mut Tape, a_int: Var, vars: &ParamVars, slope: f64) -> Result<Var> {
    let adj = combined_adjacency(tape, a_int)?;
    let h1 = propagate(tape, adj, vars.get("gcn.h0")?, vars.get("gcn.w1")?, slope)?;
    propagate(tape, adj, h1, vars.get("gcn.w2")?, slope)
}

/// Initial label embeddings, uniform in `[-0.1, 0.1]`.
pub fn label_embeddings<R: Rng>(num_labels: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..num_labels * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect();
    Tensor::new(&[num_labels, dim], data).unwrap()
}

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(&[rows, cols], data).unwrap()
}

/// `H⁰` uniform in `[-0.1, 0.1]`; layer weights Glorot-uniform.
pub fn init_params<R: Rng>(store: &mut ParamStore, num_labels: usize, dims: &GcnDims, rng: &mut R) -> Result<()> {
    store.insert("gcn.h0", label_embeddings(num_labels, dims.input, rng))?;
    store.insert("gcn.w1", glorot(dims.input, dims.hidden, rng))?;
    store.insert("gcn.w2", glorot(dims.hidden, dims.output, rng))
}

/// Dot products between label rows, min-max scaled over all entries to
/// `[0, 1]`. All-equal similarities map to 0.5.
pub fn label_similarity_heatmap(h2: &Tensor) -> Result<Tensor> {
    if h2.rank() != 2 {
        return Err(KrfError::shape("label_similarity_heatmap", h2.shape(), &[]));
    }
    let c = h2.rows();
    let mut s = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for j in i..c {
            let d: f64 = h2.row(i).iter().zip(h2.row(j)).map(|(a, b)| a * b).sum();
            s.set2(i, j, d);
            s.set2(j, i, d);
        }
    }
    let min = s.data().iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return Err(KrfError::NonFinite("label representations".into()));
    }
    let span = max - min;
    s.data_mut()
        .iter_mut()
        .for_each(|v| *v = if span > 0.0 { (*v - min) / span } else { 0.5 });
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stacked(a: &Tensor, b: &Tensor) -> Tensor {
        crate::corr::integrate(a, b).unwrap()
    }

    #[test]
    fn identity_propagation_doubles() {
        let mut tape = Tape::new();
        let a = tape.constant(stacked(&Tensor::eye(3), &Tensor::eye(3)));
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0], vec![3.0, 0.25]]).unwrap());
        let w = tape.constant(Tensor::eye(2));
        let out = gcn_layer(&mut tape, a, h, w, DEFAULT_LEAKY_SLOPE).unwrap();
        let expected: Vec<f64> = tape.value(h).data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(out).data(), &expected[..]);
    }

    #[test]
    fn zero_slice_reduces_to_single_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = glorot(4, 4, &mut rng);
        let s = Tensor::new(&[4, 4], s.data().iter().map(|v| v.abs()).collect()).unwrap();
        let h = glorot(4, 3, &mut rng);
        let w = glorot(3, 2, &mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(stacked(&s, &Tensor::zeros(&[4, 4])));
        let (hv, wv) = (tape.constant(h), tape.constant(w));
        let out = gcn_layer(&mut tape, a, hv, wv, 0.01).unwrap();
        let sv = tape.constant(s);
        let hw = tape.matmul(hv, wv).unwrap();
        let direct = tape.matmul(sv, hw).unwrap();
        let direct = tape.leaky_relu(direct, 0.01);
        assert_eq!(tape.value(out), tape.value(direct));
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        init_params(&mut store, 4, &GcnDims { input: 3, hidden: 5, output: 2 }, &mut rng).unwrap();
        let a = stacked(&glorot(4, 4, &mut rng), &glorot(4, 4, &mut rng));
        let report = grad_check(
            &store,
            |tape, vars| {
                let av = tape.constant(a.clone());
                let h2 = style_representations(tape, av, vars, 0.01)?;
                let t = tape.tanh(h2);
                Ok(tape.sum(t))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }

    #[test]
    fn isolated_label_ignores_other_rows() {
        // Label 0 is connected only to itself; labels 1..3 form a clique.
        let mut adj = Tensor::full(&[4, 4], 0.3);
        for j in 1..4 {
            adj.set2(0, j, 0.0);
            adj.set2(j, 0, 0.0);
        }
        adj.set2(0, 0, 1.0);
        let a_int = stacked(&adj, &Tensor::zeros(&[4, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        init_params(&mut store, 4, &GcnDims { input: 3, hidden: 4, output: 2 }, &mut rng).unwrap();
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let vars = store.register_frozen(&mut tape);
            let a = tape.constant(a_int.clone());
            let h2 = style_representations(&mut tape, a, &vars, 0.01).unwrap();
            tape.value(h2).clone()
        };
        let before = run(&store);
        let h0 = store.get_mut("gcn.h0").unwrap();
        h0.data_mut()[3..].iter_mut().for_each(|v| *v = 0.0);
        let after = run(&store);
        assert_eq!(before.row(0), after.row(0));
        assert_ne!(before.row(1), after.row(1));
    }

    #[test]
    fn heatmap_examples() {
        let s = label_similarity_heatmap(&Tensor::eye(3)).unwrap();
        assert_eq!(s, Tensor::eye(3));
        let dup = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let s = label_similarity_heatmap(&dup).unwrap();
        assert_eq!(s.get2(0, 1), s.get2(0, 0));
        assert_eq!(s.get2(0, 1), s.get2(1, 1));
        let flat = label_similarity_heatmap(&Tensor::zeros(&[3, 2])).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.5));
    }
}
