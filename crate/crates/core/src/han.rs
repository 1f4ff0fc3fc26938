//! Hierarchical attention encoder: a word-level Bi-GRU with attention turns
//! each review into a vector, and a review-level Bi-GRU with attention turns
//! a song's reviews into one vector.
//!
//! Inputs are batched. At the word level every review of every song in the
//! batch is one row; shorter reviews are padded and masked. At the review
//! level every song is one row and missing reviews are masked the same way.

use rand::Rng;

use crate::data::SongSample;
use crate::error::{KrfError, Result};
use crate::tensor::{ParamStore, ParamVars, Tape, Tensor, Var};
use crate::text::{Vocabulary, PAD};

/// Pre-softmax logit for masked positions.
pub const MASK_LOGIT: f64 = -1e9;

const GATES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HanDims {
    pub embed_dim: usize,
    /// Hidden size per direction at the word level.
    pub word_hidden: usize,
    /// Hidden size per direction at the review level.
    pub review_hidden: usize,
}

impl HanDims {
    /// Width of the song vector.
    pub fn output_dim(&self) -> usize {
        2 * self.review_hidden
    }
}

/// A song as token indices, with empty reviews dropped and lengths capped.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSong {
    pub id: String,
    pub reviews: Vec<Vec<usize>>,
}

impl EncodedSong {
    pub fn from_sample(vocab: &Vocabulary, sample: &SongSample, max_words: usize, max_reviews: usize) -> Result<Self> {
        let reviews: Vec<Vec<usize>> = sample
            .reviews
            .iter()
            .map(|r| {
                let mut t = vocab.encode_text(r);
                t.truncate(max_words);
                t
            })
            .filter(|t| t.iter().any(|&i| i != PAD))
            .take(max_reviews)
            .collect();
        if reviews.is_empty() {
            return Err(KrfError::Data(format!("sample `{}` has no usable reviews", sample.id)));
        }
        Ok(EncodedSong { id: sample.id.clone(), reviews })
    }
}

/// Tape handles for one GRU direction, row-vector convention
/// (`x·W + h·U + b`).
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruWeights {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        let g = |n: &str| vars.get(&format!("{prefix}.{n}"));
        Ok(GruWeights {
            w_z: g("w_z")?,
            u_z: g("u_z")?,
            b_z: g("b_z")?,
            w_r: g("w_r")?,
            u_r: g("u_r")?,
            b_r: g("b_r")?,
            w_h: g("w_h")?,
            u_h: g("u_h")?,
            b_h: g("b_h")?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub w: Var,
    pub b: Var,
    /// Context vector stored as a `[width, 1]` column.
    pub context: Var,
}

impl AttentionWeights {
    pub fn lookup(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(AttentionWeights {
            w: vars.get(&format!("{prefix}.w"))?,
            b: vars.get(&format!("{prefix}.b"))?,
            context: vars.get(&format!("{prefix}.context"))?,
        })
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add_row(s, b)
}

/// One GRU step over a batch of rows:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `h̃ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1−z)⊙h + z⊙h̃`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, w: &GruWeights) -> Result<Var> {
    let z = affine(tape, x, w.w_z, h, w.u_z, w.b_z)?;
    let z = tape.sigmoid(z);
    let r = affine(tape, x, w.w_r, h, w.u_r, w.b_r)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let cand = affine(tape, x, w.w_h, rh, w.u_h, w.b_h)?;
    let cand = tape.tanh(cand);
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

/// Runs one direction over `inputs`; a row whose mask is 0 at a step keeps
/// its previous state. Returned states line up with `inputs`.
fn run_gru(tape: &mut Tape, inputs: &[Var], masks: &[Var], w: &GruWeights, reverse: bool) -> Result<Vec<Var>> {
    let rows = tape.shape(inputs[0])[0];
    let hidden = tape.shape(w.u_z)[0];
    let mut h = tape.constant(Tensor::zeros(&[rows, hidden]));
    let mut states = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let next = gru_cell(tape, inputs[t], h, w)?;
        let delta = tape.sub(next, h)?;
        let kept = tape.mul(masks[t], delta)?;
        h = tape.add(h, kept)?;
        states[t] = h;
    }
    Ok(states)
}

fn bigru(tape: &mut Tape, inputs: &[Var], mask: &[Vec<bool>], fwd: &GruWeights, bwd: &GruWeights) -> Result<Vec<Var>> {
    let hidden = tape.shape(fwd.u_z)[0];
    let steps = inputs.len();
    let masks: Vec<Var> = (0..steps)
        .map(|t| {
            let data = mask
                .iter()
                .flat_map(|row| std::iter::repeat_n(if row[t] { 1.0 } else { 0.0 }, hidden))
                .collect();
            tape.constant(Tensor::new(&[mask.len(), hidden], data).expect("mask shape"))
        })
        .collect();
    let f = run_gru(tape, inputs, &masks, fwd, false)?;
    let b = run_gru(tape, inputs, &masks, bwd, true)?;
    f.into_iter().zip(b).map(|(x, y)| tape.concat(&[x, y], 1)).collect()
}

/// Attention pooling over per-step states `[rows, width]`:
/// `u = tanh(hW + b)`, `α = softmax(u·context)` over unmasked steps,
/// output `Σ_t α_t h_t`. Returns (pooled `[rows, width]`, α `[rows, steps]`).
fn attend(tape: &mut Tape, states: &[Var], mask: &[Vec<bool>], att: &AttentionWeights) -> Result<(Var, Var)> {
    let rows = mask.len();
    let steps = states.len();
    let width = tape.shape(states[0])[1];
    let columns: Vec<Var> = states
        .iter()
        .map(|&s| tape.reshape(s, &[rows, 1, width]))
        .collect::<Result<_>>()?;
    let stacked = tape.concat(&columns, 1)?;
    let flat = tape.reshape(stacked, &[rows * steps, width])?;
    let proj = tape.matmul(flat, att.w)?;
    let proj = tape.add_row(proj, att.b)?;
    let u = tape.tanh(proj);
    let logits = tape.matmul(u, att.context)?;
    let logits = tape.reshape(logits, &[rows, steps])?;
    let bias: Vec<f64> = mask.iter().flatten().map(|&m| if m { 0.0 } else { MASK_LOGIT }).collect();
    let bias = tape.constant(Tensor::new(&[rows, steps], bias)?);
    let logits = tape.add(logits, bias)?;
    let alpha = tape.softmax(logits, 1)?;
    let weights = tape.reshape(alpha, &[rows, 1, steps])?;
    let pooled = tape.batch_matmul(weights, stacked)?;
    Ok((tape.reshape(pooled, &[rows, width])?, alpha))
}

#[derive(Debug, Clone, Copy)]
pub struct HanOutput {
    /// `[songs, 2·review_hidden]`.
    pub songs: Var,
    /// `[reviews, 2·word_hidden]`, all reviews of the batch in song order.
    pub reviews: Var,
    /// `[reviews, max words]`.
    pub word_attention: Var,
    /// `[songs, max reviews]`.
    pub review_attention: Var,
}

fn word_level(tape: &mut Tape, vars: &ParamVars, reviews: &[&[usize]]) -> Result<(Var, Var)> {
    if let Some(r) = reviews.iter().position(|r| r.iter().all(|&t| t == PAD)) {
        return Err(KrfError::Data(format!("review {r} has no non-pad tokens")));
    }
    let embedding = vars.get("embedding")?;
    let steps = reviews.iter().map(|r| r.len()).max().unwrap_or(0);
    let mask: Vec<Vec<bool>> = reviews
        .iter()
        .map(|r| (0..steps).map(|t| r.get(t).is_some_and(|&i| i != PAD)).collect())
        .collect();
    let inputs: Vec<Var> = (0..steps)
        .map(|t| {
            let idx: Vec<usize> = reviews.iter().map(|r| r.get(t).copied().unwrap_or(PAD)).collect();
            tape.gather(embedding, &idx)
        })
        .collect::<Result<_>>()?;
    let fwd = GruWeights::lookup(vars, "han.word.fwd")?;
    let bwd = GruWeights::lookup(vars, "han.word.bwd")?;
    let states = bigru(tape, &inputs, &mask, &fwd, &bwd)?;
    attend(tape, &states, &mask, &AttentionWeights::lookup(vars, "han.word.att")?)
}

/// Word-level encoding of one review: (`[1, 2·word_hidden]`, α `[1, J]`).
pub fn encode_review(tape: &mut Tape, vars: &ParamVars, tokens: &[usize]) -> Result<(Var, Var)> {
    if tokens.is_empty() {
        return Err(KrfError::Data("empty review".into()));
    }
    word_level(tape, vars, &[tokens])
}

/// Encodes a batch of songs.
pub fn encode_batch(tape: &mut Tape, vars: &ParamVars, songs: &[&EncodedSong]) -> Result<HanOutput> {
    if songs.is_empty() {
        return Err(KrfError::Data("empty batch".into()));
    }
    if let Some(s) = songs.iter().find(|s| s.reviews.is_empty()) {
        return Err(KrfError::Data(format!("sample `{}` has no usable reviews", s.id)));
    }
    let flat: Vec<&[usize]> = songs.iter().flat_map(|s| s.reviews.iter().map(Vec::as_slice)).collect();
    let (reviews, word_attention) = word_level(tape, vars, &flat)?;

    let width = tape.shape(reviews)[1];
    let padding = tape.constant(Tensor::zeros(&[1, width]));
    let table = tape.concat(&[reviews, padding], 0)?;
    let pad_row = flat.len();
    let steps = songs.iter().map(|s| s.reviews.len()).max().unwrap();
    let mut offsets = Vec::with_capacity(songs.len());
    let mut at = 0;
    for s in songs {
        offsets.push(at);
        at += s.reviews.len();
    }
    let mask: Vec<Vec<bool>> = songs.iter().map(|s| (0..steps).map(|k| k < s.reviews.len()).collect()).collect();
    let inputs: Vec<Var> = (0..steps)
        .map(|k| {
            let idx: Vec<usize> = songs
                .iter()
                .zip(&offsets)
                .map(|(s, &o)| if k < s.reviews.len() { o + k } else { pad_row })
                .collect();
            tape.gather(table, &idx)
        })
        .collect::<Result<_>>()?;
    let fwd = GruWeights::lookup(vars, "han.review.fwd")?;
    let bwd = GruWeights::lookup(vars, "han.review.bwd")?;
    let states = bigru(tape, &inputs, &mask, &fwd, &bwd)?;
    let (songs_out, review_attention) = attend(tape, &states, &mask, &AttentionWeights::lookup(vars, "han.review.att")?)?;
    Ok(HanOutput {
        songs: songs_out,
        reviews,
        word_attention,
        review_attention,
    })
}

pub fn encode_song(tape: &mut Tape, vars: &ParamVars, song: &EncodedSong) -> Result<HanOutput> {
    encode_batch(tape, vars, &[song])
}

fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()).unwrap()
}

/// Random orthogonal `n × n` matrix by Gram-Schmidt on uniform draws.
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    loop {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for q in &rows {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
        if ok {
            return Tensor::from_rows(&rows).unwrap();
        }
    }
}

fn init_gru<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
    for gate in GATES {
        let t = match &gate[..1] {
            "w" => uniform(&[input, hidden], 0.08, rng),
            "u" => orthogonal(hidden, rng),
            _ => Tensor::zeros(&[hidden]),
        };
        store.insert(format!("{prefix}.{gate}"), t)?;
    }
    Ok(())
}

fn init_attention<R: Rng>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.w"), uniform(&[width, width], 0.08, rng))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[width]))?;
    store.insert(format!("{prefix}.context"), uniform(&[width, 1], 0.08, rng))
}

/// Registers the embedding table and both encoder levels. Without a
/// pretrained table the embedding is uniform in `[-0.05, 0.05]`.
pub fn init_params<R: Rng>(
    store: &mut ParamStore,
    vocab_size: usize,
    dims: &HanDims,
    embedding: Option<Tensor>,
    rng: &mut R,
) -> Result<()> {
    let emb = match embedding {
        Some(t) => {
            if t.shape() != [vocab_size, dims.embed_dim] {
                return Err(KrfError::shape("embedding", t.shape(), &[vocab_size, dims.embed_dim]));
            }
            t
        }
        None => uniform(&[vocab_size, dims.embed_dim], 0.05, rng),
    };
    store.insert("embedding", emb)?;
    for dir in ["fwd", "bwd"] {
        init_gru(store, &format!("han.word.{dir}"), dims.embed_dim, dims.word_hidden, rng)?;
    }
    init_attention(store, "han.word.att", 2 * dims.word_hidden, rng)?;
    for dir in ["fwd", "bwd"] {
        init_gru(store, &format!("han.review.{dir}"), 2 * dims.word_hidden, dims.review_hidden, rng)?;
    }
    init_attention(store, "han.review.att", 2 * dims.review_hidden, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DIMS: HanDims = HanDims { embed_dim: 4, word_hidden: 3, review_hidden: 2 };

    fn store(seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_params(&mut s, 12, &DIMS, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    fn song(reviews: &[&[usize]]) -> EncodedSong {
        EncodedSong { id: "s".into(), reviews: reviews.iter().map(|r| r.to_vec()).collect() }
    }

    fn zero_gru(store: &mut ParamStore, input: usize, hidden: usize) {
        for gate in GATES {
            let shape = match &gate[..1] {
                "w" => vec![input, hidden],
                "u" => vec![hidden, hidden],
                _ => vec![hidden],
            };
            store.insert(format!("g.{gate}"), Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let mut s = ParamStore::new();
        zero_gru(&mut s, 2, 3);
        let mut tape = Tape::new();
        let vars = s.register(&mut tape);
        let w = GruWeights::lookup(&vars, "g").unwrap();
        let x = tape.constant(Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap());
        let h = tape.constant(Tensor::from_rows(&[vec![0.8, -0.4, 0.2]]).unwrap());
        let out = gru_cell(&mut tape, x, h, &w).unwrap();
        assert_eq!(tape.value(out).data(), &[0.4, -0.2, 0.1]);
    }

    #[test]
    fn gru_state_stays_in_unit_box() {
        let s = store(1);
        let mut tape = Tape::new();
        let vars = s.register(&mut tape);
        let w = GruWeights::lookup(&vars, "han.word.fwd").unwrap();
        let mut h = tape.constant(Tensor::zeros(&[1, 3]));
        for k in 0..6 {
            let x = tape.constant(Tensor::full(&[1, 4], 3.0 * (k as f64 - 2.5)));
            h = gru_cell(&mut tape, x, h, &w).unwrap();
            assert!(tape.value(h).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn gru_cell_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 3, 2, &mut rng).unwrap();
        for name in ["g.b_z", "g.b_r", "g.b_h"] {
            *s.get_mut(name).unwrap() = uniform(&[2], 0.5, &mut rng).with_requires_grad();
        }
        let x = uniform(&[2, 3], 1.0, &mut rng);
        let h0 = uniform(&[2, 2], 0.9, &mut rng);
        let report = grad_check(
            &s,
            |tape, vars| {
                let w = GruWeights::lookup(vars, "g")?;
                let x = tape.constant(x.clone());
                let h = tape.constant(h0.clone());
                let h1 = gru_cell(tape, x, h, &w)?;
                let h2 = gru_cell(tape, x, h1, &w)?;
                Ok(tape.sum(h2))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn single_token_review_attends_fully() {
        let s = store(2);
        let mut tape = Tape::new();
        let vars = s.register(&mut tape);
        let (x, alpha) = encode_review(&mut tape, &vars, &[5]).unwrap();
        assert_eq!(tape.value(alpha).data(), &[1.0]);
        assert_eq!(tape.shape(x), &[1, 6]);
        assert!(encode_review(&mut tape, &vars, &[PAD, PAD]).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one_and_ignore_padding() {
        let s = store(3);
        let mut tape = Tape::new();
        let vars = s.register(&mut tape);
        let a = song(&[&[2, 3, 4, 5, 6], &[7, 8]]);
        let b = song(&[&[9]]);
        let out = encode_batch(&mut tape, &vars, &[&a, &b]).unwrap();
        let words = tape.value(out.word_attention).clone();
        for r in 0..words.rows() {
            assert!((words.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(words.row(1)[2..].iter().all(|&v| v < 1e-300));
        let revs = tape.value(out.review_attention).clone();
        assert!((revs.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(revs.row(1), &[1.0, 0.0]);
        assert_eq!(tape.shape(out.songs), &[2, DIMS.output_dim()]);
    }

    #[test]
    fn padding_does_not_change_song_vectors() {
        let s = store(5);
        let a = song(&[&[2, 3], &[4]]);
        let long = song(&[&[2, 3, 4, 5, 6, 7, 8], &[9, 10], &[11, 2], &[3]]);
        let mut t1 = Tape::new();
        let v1 = s.register_frozen(&mut t1);
        let alone = encode_song(&mut t1, &v1, &a).unwrap();
        let mut t2 = Tape::new();
        let v2 = s.register_frozen(&mut t2);
        let batched = encode_batch(&mut t2, &v2, &[&long, &a]).unwrap();
        let x1 = t1.value(alone.songs).row(0).to_vec();
        let x2 = t2.value(batched.songs).row(1).to_vec();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_reviews_get_identical_attention() {
        let s = store(6);
        let mut tape = Tape::new();
        let vars = s.register(&mut tape);
        let out = encode_batch(&mut tape, &vars, &[&song(&[&[2, 3, 4], &[2, 3, 4]])]).unwrap();
        let w = tape.value(out.word_attention);
        assert_eq!(w.row(0), w.row(1));
    }

    #[test]
    fn encode_song_gradients_match_finite_differences() {
        let s = store(7);
        let a = song(&[&[2, 3, 4], &[5, 2]]);
        let b = song(&[&[6, 7, 8, 9]]);
        let report = grad_check(
            &s,
            |tape, vars| {
                let out = encode_batch(tape, vars, &[&a, &b])?;
                let sq = tape.mul(out.songs, out.songs)?;
                let t = tape.tanh(out.songs);
                let y = tape.add(sq, t)?;
                Ok(tape.sum(y))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "worst {:?}", report.worst());
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = orthogonal(5, &mut ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::new();
        let a = tape.constant(q.clone());
        let b = tape.constant(q.transpose2());
        let p = tape.matmul(a, b).unwrap();
        assert!(tape.value(p).max_abs_diff(&Tensor::eye(5)) < 1e-12);
    }
}
