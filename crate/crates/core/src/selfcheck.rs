//! Central-difference gradient checks over every differentiable op and over
//! the full networks, shared by the unit tests and the acceptance run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::flow::nll_rows;
use crate::generator::build_trajectory;
use crate::model::{Forward, ModelParams, Plan};
use crate::numeric::gradcheck::{check, GradCheckReport};
use crate::numeric::{BnMode, Tape, Tensor, Var};
use crate::repr::{forward, repr_loss};
use crate::scene::{synth_corpus, GrammarConfig, RuleSet, SceneRecord};
use crate::train::{init_model, trajectory_nll, FlowTargets, TrainConfig};

pub const STEP: f64 = 1e-5;

pub type Named = Vec<(&'static str, GradCheckReport)>;

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::uniform(&[r, c], 1.0, rng)
}

/// Weighted sum so every output entry carries a distinct gradient.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = t.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn run(inputs: &[Tensor], probes: usize, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<GradCheckReport> {
    check(inputs, probes, STEP, &mut ChaCha8Rng::seed_from_u64(11), f)
}

pub fn op_gradients(probes: usize) -> Result<Named> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 3, 4);
    let mut out = Vec::new();
    out.push((
        "add, sub, mul, exp, relu, log, scale",
        run(&[a.clone(), b], probes, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let e = t.exp(m)?;
            let r = t.relu(e)?;
            let l = t.log(r)?;
            let k = t.scale(l, -1.5)?;
            project(t, k, 3)
        })?,
    ));
    out.push((
        "clamp",
        run(&[a], probes, |t, v| {
            let c = t.clamp(v[0], -0.5, 0.5)?;
            project(t, c, 4)
        })?,
    ));

    let m = rand_matrix(&mut rng, 4, 3);
    let w = rand_matrix(&mut rng, 3, 5);
    let row = rand_matrix(&mut rng, 1, 5);
    out.push((
        "matmul, add_row, gather_rows, sum_rows, broadcast_row",
        run(&[m, w, row], probes, |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let r = t.add_row(m, v[2])?;
            let g = t.gather_rows(r, &[3, 0, 0, 2])?;
            let s = t.sum_rows(g)?;
            let b = t.broadcast_row(s, 2)?;
            project(t, b, 5)
        })?,
    ));

    let x = rand_matrix(&mut rng, 3, 5);
    out.push((
        "softmax",
        run(std::slice::from_ref(&x), probes, |t, v| {
            let s = t.softmax(v[0])?;
            project(t, s, 6)
        })?,
    ));
    out.push((
        "log_softmax",
        run(std::slice::from_ref(&x), probes, |t, v| {
            let s = t.log_softmax(v[0])?;
            project(t, s, 7)
        })?,
    ));
    out.push((
        "mean, sum",
        run(&[x], probes, |t, v| {
            let s = t.mean(v[0])?;
            let e = t.exp(v[0])?;
            let q = t.sum(e)?;
            t.mul(s, q)
        })?,
    ));

    let p = rand_matrix(&mut rng, 2, 3);
    let q = rand_matrix(&mut rng, 2, 2);
    let r = rand_matrix(&mut rng, 1, 5);
    out.push((
        "concat_cols, concat_rows, slice_cols",
        run(&[p, q, r], probes, |t, v| {
            let ab = t.concat_cols(&[v[0], v[1]])?;
            let abc = t.concat_rows(&[ab, v[2]])?;
            let s = t.slice_cols(abc, 1, 4)?;
            project(t, s, 8)
        })?,
    ));

    let x = rand_matrix(&mut rng, 6, 4);
    let g = rand_matrix(&mut rng, 1, 4);
    let b = rand_matrix(&mut rng, 1, 4);
    let rm = vec![0.1, -0.2, 0.0, 0.3];
    let rv = vec![1.0, 0.5, 2.0, 0.7];
    for (name, mode) in [("batch_norm (batch statistics)", BnMode::Train), ("batch_norm (running statistics)", BnMode::Eval)] {
        out.push((
            name,
            run(&[x.clone(), g.clone(), b.clone()], probes, |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], mode, (&rm, &rv), 1e-5)?;
                project(t, y, 9)
            })?,
        ));
    }

    let x = rand_matrix(&mut rng, 7, 3);
    let ind = [0, 1, 0, 2, 1, 2, 0];
    out.push((
        "segment_max",
        run(&[x], probes, |t, v| {
            let y = t.segment_max(v[0], &ind, 3)?;
            project(t, y, 10)
        })?,
    ));

    let z = rand_matrix(&mut rng, 6, 5);
    let head = Tensor::uniform(&[6, 10], 2.0, &mut rng);
    out.push(("gaussian nll", run(&[z, head], probes, |t, v| nll_rows(t, v[0], v[1], 7.0))?));
    Ok(out)
}

struct Fixture {
    rules: RuleSet,
    scene: SceneRecord,
    model: ModelParams,
}

fn fixture() -> Result<Fixture> {
    let cfg = GrammarConfig {
        max_instances: Some(9),
        ..GrammarConfig::default()
    };
    let rules = cfg.rules()?;
    let scene = synth_corpus(&cfg, 1, 17)?.remove(0);
    let model = init_model(std::slice::from_ref(&scene), &rules, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(2))?;
    Ok(Fixture { rules, scene, model })
}

/// Checks the gradient of `loss` with respect to the parameters whose names
/// start with one of `prefixes`, the rest of the model held fixed.
fn check_params<F>(model: &ModelParams, prefixes: &[&str], mode: BnMode, probes: usize, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Forward) -> Result<Var>,
{
    let names: Vec<String> = model.params.keys().filter(|n| prefixes.iter().any(|p| n.starts_with(p))).cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| (*model.params[n]).clone()).collect();
    run(&inputs, probes, |tape, vars| {
        let t = std::mem::replace(tape, Tape::inference());
        let mut f = Forward::with_tape(model, t, mode);
        for (n, &v) in names.iter().zip(vars) {
            f.bind(n, v);
        }
        let out = loss(&mut f);
        *tape = f.tape;
        out
    })
}

fn flow_loss(f: &mut Forward, plan: &Plan, fx: &Fixture) -> Result<Var> {
    let t = build_trajectory(&fx.scene.graph, &fx.rules)?;
    let targets = FlowTargets::draw(&t, fx.rules.node_classes(), fx.rules.edge_classes(), &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(9))?;
    let nll = trajectory_nll(f, plan, &t, &targets)?;
    f.tape.scale(nll, 1.0 / targets.len() as f64)
}

/// Representation losses through the point network and both heads, then the
/// per-element flow NLL through the GCN and through the condition heads.
pub fn network_gradients(probes: usize) -> Result<Named> {
    let fx = fixture()?;
    let plan = Plan::new(&fx.model.arch);
    let repr = check_params(&fx.model, &["repr."], BnMode::Train, probes, |f| {
        let s = &fx.scene;
        let pass = forward(f, &plan, &s.points, &s.indicator, s.instance_count())?;
        let (l_n, l_e) = repr_loss(f, &pass, &s.graph)?;
        f.tape.add(l_n, l_e)
    })?;
    let gcn = check_params(&fx.model, &["cond.gcn."], BnMode::Eval, probes, |f| flow_loss(f, &plan, &fx))?;
    let heads = check_params(&fx.model, &["cond.node.", "cond.edge."], BnMode::Eval, probes, |f| flow_loss(f, &plan, &fx))?;
    Ok(vec![
        ("representation network", repr),
        ("gcn via flow nll", gcn),
        ("condition heads via flow nll", heads),
    ])
}
