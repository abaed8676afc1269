//! Shared fixtures and finite-difference helpers for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::rc::Rc;

use nonar_mmi::ar::{ar_gradients, ArDirection, ArModel};
use nonar_mmi::backward::joint_gradients;
use nonar_mmi::data::vocab::{EOS, NUM_RESERVED};
use nonar_mmi::data::{SourceTargetPair, Vocabulary};
use nonar_mmi::decoding::BeamHypothesis;
use nonar_mmi::model::{group, AR_BACKWARD_PREFIX, AR_FORWARD_PREFIX, BACKWARD_PREFIX, FORWARD_PREFIX, SHARED_PREFIX};
use nonar_mmi::nn::{causal_mask, relative_attention, RelativeTables};
use nonar_mmi::model::System;
use nonar_mmi::params::{Gradients, Init, ParamId, ParamStore};
use nonar_mmi::tensor::{Graph, Tensor, Var};
use nonar_mmi::transformer::{delta_to_class, BlockConfig};
use nonar_mmi::Result;

pub const FD_STEP: f64 = 1e-6;

/// Norms below this count as zero when forming relative errors; some
/// gradients vanish exactly (a key bias shifts every score of a query alike).
pub const NORM_FLOOR: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖ + ‖b‖, NORM_FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()) + norm(&mut b.iter().copied());
    diff / scale.max(NORM_FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0));
    t
}

/// Worst relative error between the tape gradient and central differences
/// of `Σ w ⊙ op(inputs)` for a fixed random weighting `w`.
pub fn op_grad_error(inputs: &[Tensor], seed: u64, op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut r = rng(seed);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars).unwrap();
        random_tensor(g.shape(out), &mut r)
    };
    let value = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars).unwrap();
        g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = op(&mut g, &vars).unwrap();
    let w = g.constant(probe.clone());
    let weighted = g.mul(out, w).unwrap();
    let loss = g.sum(weighted);
    g.backward(loss);
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] += FD_STEP;
            let up = value(&ins);
            ins[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = value(&ins);
            *n = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Relative error per parameter tensor over up to `per_tensor` sampled
/// coordinates, comparing `grads` with central differences of `loss`.
pub fn param_grad_errors(
    store: &ParamStore,
    grads: &Gradients,
    ids: &[ParamId],
    per_tensor: usize,
    seed: u64,
    loss: impl Fn(&ParamStore) -> f64,
) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let mut work = store.clone();
    let mut out = Vec::new();
    for &id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut r, n, per_tensor).into_vec()
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for j in coords {
            analytic.push(grads.get(id).map_or(0.0, |g| g.data()[j]));
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let up = loss(&work);
            work.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let down = loss(&work);
            work.get_mut(id).data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        out.push((store.name(id).to_owned(), rel_err(&analytic, &numeric)));
    }
    out
}

pub fn word_vocab(words: usize) -> Vocabulary {
    let names: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    Vocabulary::from_words(names.iter().map(String::as_str))
}

/// Random tiny system over `words` words whose parallel length classifier
/// is pinned to `Δm = 0`, so decoded lengths equal source lengths.
pub fn oracle_system(words: usize, seed: u64) -> System {
    let mut sys = System::new(word_vocab(words), &BlockConfig::tiny(), Init::Random { scale: 1.0 }, seed).unwrap();
    pin_length_delta(&mut sys, &[0]);
    sys
}

/// Adds a large bias to the given length differences, in decreasing preference.
pub fn pin_length_delta(sys: &mut System, deltas: &[i64]) {
    let id = sys.store.id("fwd.len.b").expect("length classifier bias");
    for (rank, &d) in deltas.iter().enumerate() {
        sys.store.get_mut(id).data_mut()[delta_to_class(d)] += 40.0 - 5.0 * rank as f64;
    }
}

/// Random system with the given initial scale and no length pinning.
pub fn random_system(words: usize, cfg: &BlockConfig, scale: f64, seed: u64) -> System {
    System::new(word_vocab(words), cfg, Init::Random { scale }, seed).unwrap()
}

pub fn random_sequence(vocab: &Vocabulary, len: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    let ids = vocab.word_ids();
    (0..len).map(|_| r.gen_range(ids.clone())).collect()
}

pub fn random_sources(vocab: &Vocabulary, n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.gen_range(min_len..=max_len);
            random_sequence(vocab, len, &mut r)
        })
        .collect()
}

pub fn random_pairs(vocab: &Vocabulary, n: usize, max_len: usize, seed: u64) -> Vec<SourceTargetPair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (a, b) = (r.gen_range(1..=max_len), r.gen_range(1..=max_len));
            SourceTargetPair::new(random_sequence(vocab, a, &mut r), random_sequence(vocab, b, &mut r))
        })
        .collect()
}

/// Every sequence of length `len` over `ids`, in lexicographic order.
pub fn all_sequences(ids: std::ops::Range<usize>, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                ids.clone().map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn t(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, &mut rng(seed))
}

/// Gradient error of every differentiable tape operation on random inputs.
pub fn unit_op_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut check = |name: &'static str, inputs: &[Tensor], op: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>| {
        out.push((name, op_grad_error(inputs, 7, op)));
    };
    check("matmul", &[t(&[3, 4], 1), t(&[4, 2], 2)], &|g, v| g.matmul(v[0], v[1]));
    check("matmul_nt", &[t(&[3, 4], 3), t(&[5, 4], 4)], &|g, v| g.matmul_nt(v[0], v[1]));
    check("add", &[t(&[2, 3], 1), t(&[2, 3], 2)], &|g, v| g.add(v[0], v[1]));
    check("add_row", &[t(&[3, 4], 1), t(&[4], 2)], &|g, v| g.add_row(v[0], v[1]));
    check("mul", &[t(&[2, 3], 1), t(&[2, 3], 2)], &|g, v| g.mul(v[0], v[1]));
    check("scale", &[t(&[2, 3], 1)], &|g, v| Ok(g.scale(v[0], -2.5)));
    let c = t(&[2, 3], 9);
    check("add_const", &[t(&[2, 3], 1)], &|g, v| g.add_const(v[0], &c));
    // keep inputs away from the kink
    let mut x = t(&[3, 3], 5);
    x.data_mut().iter_mut().for_each(|v| *v += v.signum() * 0.1);
    check("relu", &[x], &|g, v| Ok(g.relu(v[0])));
    check("softmax rows", &[t(&[3, 4], 1)], &|g, v| g.softmax(v[0], 1));
    check("softmax columns", &[t(&[3, 4], 1)], &|g, v| g.softmax(v[0], 0));
    check("log_softmax rows", &[t(&[3, 4], 2)], &|g, v| g.log_softmax(v[0], 1));
    check("log_softmax columns", &[t(&[3, 4], 2)], &|g, v| g.log_softmax(v[0], 0));
    check("layer_norm", &[t(&[3, 5], 1), t(&[5], 2), t(&[5], 3)], &|g, v| g.layer_norm(v[0], v[1], v[2]));
    check("cross_entropy", &[t(&[4, 6], 1)], &|g, v| g.cross_entropy(v[0], &[0, 5, 2, 2]));
    check("sum", &[t(&[2, 3], 1)], &|g, v| Ok(g.sum(v[0])));
    check("mean", &[t(&[2, 3], 1)], &|g, v| Ok(g.mean(v[0])));
    check("gather_rows", &[t(&[5, 3], 1)], &|g, v| g.gather_rows(v[0], &[4, 0, 4, 2]));
    check("embedding", &[t(&[5, 3], 2)], &|g, v| g.embedding(v[0], &[1, 1]));
    check("concat_cols", &[t(&[2, 3], 1), t(&[2, 1], 2)], &|g, v| g.concat_cols(&[v[0], v[1]]));
    check("concat_rows", &[t(&[2, 3], 1), t(&[1, 3], 2)], &|g, v| g.concat_rows(&[v[0], v[1]]));
    check("slice_cols", &[t(&[3, 5], 1)], &|g, v| g.slice_cols(v[0], 1, 3));
    let idx: Rc<[usize]> = vec![0, 2, 2, 1, 0, 0].into();
    check("gather_index", &[t(&[3, 3], 1)], &|g, v| g.gather_index(v[0], idx.clone(), 2));
    check("scatter_index", &[t(&[3, 2], 1)], &|g, v| g.scatter_index(v[0], idx.clone(), 4));
    check("max_pool_rows", &[t(&[4, 3], 1)], &|g, v| g.max_pool_rows(v[0]));
    check("dropout", &[t(&[3, 4], 1)], &|g, v| g.dropout(v[0], 0.3, &mut rng(11)));
    let mask = causal_mask(4);
    check("masked attention", &[t(&[4, 3], 1), t(&[4, 3], 2), t(&[4, 3], 3)], &|g, v| {
        relative_attention(g, v[0], v[1], v[2], None, Some(&mask))
    });
    check(
        "relative attention",
        &[t(&[5, 2], 1), t(&[5, 2], 2), t(&[5, 2], 3), t(&[5, 2], 4), t(&[5, 2], 5)],
        &|g, v| {
            let rel = RelativeTables {
                keys: v[3],
                values: v[4],
                clip: 2,
            };
            relative_attention(g, v[0], v[1], v[2], Some(rel), None)
        },
    );
    out
}

/// Gradient error of every parameter tensor of a tiny system (d=8, one
/// block, 12 words), over sampled coordinates.
pub fn model_grad_errors() -> Vec<(String, f64)> {
    const PER_TENSOR: usize = 6;
    let sys = random_system(12, &BlockConfig::tiny(), 1.0, 3);
    let batch = random_pairs(&sys.vocab, 3, 4, 5);
    let (_, grads) = joint_gradients(&sys.nonar, &sys.store, &batch).unwrap();
    let ids = group(&sys.store, &[SHARED_PREFIX, FORWARD_PREFIX, BACKWARD_PREFIX]);
    let loss = |s: &ParamStore| joint_gradients(&sys.nonar, s, &batch).unwrap().0.total();
    let mut out = param_grad_errors(&sys.store, &grads, &ids, PER_TENSOR, 1, loss);
    for (model, prefix, dir) in [
        (&sys.ar_forward, AR_FORWARD_PREFIX, ArDirection::SourceToTarget),
        (&sys.ar_backward, AR_BACKWARD_PREFIX, ArDirection::TargetToSource),
    ] {
        let (_, grads) = ar_gradients(model, &sys.store, &batch, dir).unwrap();
        let ids = group(&sys.store, &[prefix]);
        let loss = |s: &ParamStore| ar_gradients(model, s, &batch, dir).unwrap().0;
        out.extend(param_grad_errors(&sys.store, &grads, &ids, PER_TENSOR, 2, loss));
    }
    out
}

/// Plain beam search written against the full vocabulary: every live
/// hypothesis is extended by every allowed token and the best `beam`
/// survive, ties to the earlier parent and then the lower token.
pub fn reference_beam(model: &ArModel, store: &ParamStore, x: &[usize], beam: usize, max_len: usize) -> Vec<BeamHypothesis> {
    let h = model.encode(store, x).unwrap();
    let mut live = vec![(Vec::<usize>::new(), 0.0)];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut pool = Vec::new();
        for (p, (tokens, lp)) in live.iter().enumerate() {
            let next = model.next_logprobs(store, &h, tokens).unwrap();
            for (tok, l) in next.iter().enumerate() {
                let allowed = (tok == EOS && !tokens.is_empty()) || tok >= NUM_RESERVED;
                if allowed {
                    pool.push((lp + l, p, tok));
                }
            }
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::new();
        for (lp, p, tok) in pool.into_iter().take(beam) {
            let mut tokens = live[p].0.clone();
            if tok == EOS {
                done.push(BeamHypothesis { tokens, logprob: lp });
            } else {
                tokens.push(tok);
                next_live.push((tokens, lp));
            }
        }
        live = next_live;
        if done.len() >= beam {
            live.clear();
            break;
        }
    }
    for (tokens, lp) in live {
        let next = model.next_logprobs(store, &h, &tokens).unwrap();
        done.push(BeamHypothesis {
            logprob: lp + next[EOS],
            tokens,
        });
    }
    done.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    done.truncate(beam);
    done
}
