//! Analytic gradients against central finite differences.

use hcmarl_autodiff::{
    cross_entropy_soft, mlp_forward, multi_head_attention, Activation, AttentionSpec, Bound,
    MlpSpec, ParameterSet, Result, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss_fn` w.r.t. every parameter against
/// central differences. Returns the worst relative error.
fn check<F>(params: &ParameterSet, loss_fn: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let loss = loss_fn(&mut tape, &bound).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = params.clone();
    grads.write_to(&bound, &mut analytic).unwrap();

    let eval = |p: &ParameterSet| {
        let mut tape = Tape::new();
        let b = tape.bind_frozen(p);
        let l = loss_fn(&mut tape, &b).unwrap();
        tape.scalar(l)
    };

    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        for i in 0..n {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += H;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.get(&name).unwrap().grad().unwrap()[i];
            let e = rel_err(a, numeric);
            assert!(
                e < TOL,
                "{name}[{i}]: analytic {a} vs numeric {numeric} (rel {e})"
            );
            worst = worst.max(e);
        }
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

#[test]
fn random_mlps_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=16));
        }
        let act = [Activation::Tanh, Activation::Identity][seed as usize % 2];
        let spec = MlpSpec::new(sizes.clone(), act).unwrap();
        let params = spec.init(&mut rng, 1.0);
        let x = random_tensor(&mut rng, vec![3, sizes[0]], 1.0);
        check(&params, |tape, b| {
            let xi = tape.constant(&x);
            let y = mlp_forward(tape, b, xi, &spec)?;
            let sq = tape.square(y);
            Ok(tape.mean(sq))
        });
    }
}

#[test]
fn relu_mlp_with_soft_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = MlpSpec::new(vec![4, 8, 3], Activation::Relu).unwrap();
    let params = spec.init(&mut rng, 1.0);
    let x = random_tensor(&mut rng, vec![5, 4], 1.0);
    let target = Tensor::matrix(5, 3, (0..5).flat_map(|_| [0.2, 0.5, 0.3]).collect()).unwrap();
    check(&params, |tape, b| {
        let xi = tape.constant(&x);
        let logits = mlp_forward(tape, b, xi, &spec)?;
        let logp = tape.log_softmax_rows(logits, 0.7)?;
        let t = tape.constant(&target);
        cross_entropy_soft(tape, t, logp)
    });
}

#[test]
fn attention_gradients() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let spec = AttentionSpec::new(4, 2).unwrap();
        let mut params = ParameterSet::new();
        spec.init(&mut rng, "attn.", &mut params);
        params.insert("tokens", random_tensor(&mut rng, vec![3, 4], 1.0));
        check(&params, |tape, b| {
            let x = b.get("tokens")?;
            let out = multi_head_attention(tape, b, "attn.", x, &spec)?;
            let pooled = tape.mean_rows(out.output)?;
            let sq = tape.square(pooled);
            Ok(tape.sum(sq))
        });
    }
}

#[test]
fn elementwise_and_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParameterSet::new();
    params.insert("a", random_tensor(&mut rng, vec![3, 4], 1.0));
    params.insert("b", random_tensor(&mut rng, vec![3, 4], 1.0));
    params.insert("table", random_tensor(&mut rng, vec![5, 2], 1.0));
    check(&params, |tape, p| {
        let a = p.get("a")?;
        let b = p.get("b")?;
        let t = p.get("table")?;
        let diff = tape.sub(a, b)?;
        let prod = tape.mul(diff, a)?;
        let e = tape.exp(b);
        let m = tape.minimum(prod, e)?;
        let c = tape.clamp(a, -0.5, 0.5);
        let s = tape.add(m, c)?;
        let tr = tape.transpose(s)?;
        let sl = tape.slice_cols(tr, 1, 2)?;
        let g = tape.gather_rows(t, &[0, 3, 3, 4])?;
        let cat = tape.concat_cols(&[sl, g])?;
        let rows = tape.concat_rows(&[cat, cat])?;
        let sm = tape.softmax_rows(rows, 0.5)?;
        let picked = tape.pick(sm, &[0, 1, 2, 3, 0, 1, 2, 3])?;
        let lsm = tape.log_softmax_rows(cat, 2.0)?;
        let sc = tape.sum_cols(lsm)?;
        let pooled = tape.mean_rows(cat)?;
        let pooled = tape.tanh(pooled);
        let l1 = tape.sum(picked);
        let l2 = tape.mean(sc);
        let l3 = tape.sum(pooled);
        let l = tape.add(l1, l2)?;
        let l = tape.add(l, l3)?;
        let l = tape.add_scalar(l, 3.0);
        Ok(tape.scale(l, 0.5))
    });
}

#[test]
fn gradient_through_detach_is_zero() {
    let mut params = ParameterSet::new();
    params.insert("w", Tensor::row(vec![0.5, -0.25]));
    let mut tape = Tape::new();
    let b = tape.bind(&params);
    let w = b.get("w").unwrap();
    let d = tape.detach(w);
    let prod = tape.mul(d, d).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    g.write_to(&b, &mut params).unwrap();
    assert_eq!(params.get("w").unwrap().grad().unwrap(), &[0.0, 0.0]);
}
