//! Scene graph representation from a point cloud: a pointwise MLP pooled per
//! instance, a node classifier, and an edge classifier over feature
//! differences of instance pairs.

use log::warn;

use crate::error::{Error, Result};
use crate::model::{Forward, ModelParams, Plan};
use crate::numeric::{argmax, softmax_rows, Tensor, Var};
use crate::scene::{SceneGraph, EMPTY_RELATION};

/// Ordered pairs `(i, j)` with `i != j`, row-major.
pub fn off_diagonal_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

/// `X_v`: one feature row per instance, the max over its points of the
/// pointwise MLP.
pub fn encode_instances(f: &mut Forward, plan: &Plan, points: &Tensor, indicator: &[usize], m: usize) -> Result<Var> {
    let c = f.model.arch.input_channels;
    if points.shape().len() != 2 || points.cols() != c {
        return Err(Error::Shape {
            op: "encode_instances",
            lhs: points.shape().to_vec(),
            rhs: vec![c],
        });
    }
    let x = f.tape.constant(points.clone());
    let h = f.mlp("repr.point", plan.stack("repr.point"), x)?;
    f.tape.segment_max(h, indicator, m)
}

/// Node logits, `m x c_n`.
pub fn node_head(f: &mut Forward, plan: &Plan, x_v: Var) -> Result<Var> {
    f.mlp("repr.node", plan.stack("repr.node"), x_v)
}

/// Rows `X_v[i] - X_v[j]` for the given pairs.
pub fn edge_init(f: &mut Forward, x_v: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let subjects: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let objects: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a = f.tape.gather_rows(x_v, &subjects)?;
    let b = f.tape.gather_rows(x_v, &objects)?;
    f.tape.sub(a, b)
}

/// The full `m x m x d` difference tensor, `E[i, j] = X[i] - X[j]`.
pub fn edge_init_full(x_v: &Tensor) -> Tensor {
    let (m, d) = (x_v.rows(), x_v.cols());
    let mut data = Vec::with_capacity(m * m * d);
    for i in 0..m {
        for j in 0..m {
            data.extend(x_v.row_slice(i).iter().zip(x_v.row_slice(j)).map(|(a, b)| a - b));
        }
    }
    Tensor::new(vec![m, m, d], data).expect("m*m*d entries")
}

/// Edge logits, one `c_e` row per input row.
pub fn edge_head(f: &mut Forward, plan: &Plan, e_init: Var) -> Result<Var> {
    f.mlp("repr.edge", plan.stack("repr.edge"), e_init)
}

/// Forward pass of the whole representation network.
pub struct ReprPass {
    pub x_v: Var,
    pub node_logits: Var,
    /// Logits for [`off_diagonal_pairs`] of the instance count, in order.
    pub edge_logits: Var,
    pub pairs: Vec<(usize, usize)>,
}

pub fn forward(f: &mut Forward, plan: &Plan, points: &Tensor, indicator: &[usize], m: usize) -> Result<ReprPass> {
    let x_v = encode_instances(f, plan, points, indicator, m)?;
    let node_logits = node_head(f, plan, x_v)?;
    let pairs = off_diagonal_pairs(m);
    let edge_logits = if pairs.is_empty() {
        f.tape.constant(Tensor::zeros(&[0, f.model.arch.edge_classes]))
    } else {
        let e = edge_init(f, x_v, &pairs)?;
        edge_head(f, plan, e)?
    };
    Ok(ReprPass {
        x_v,
        node_logits,
        edge_logits,
        pairs,
    })
}

/// Cross-entropy losses `(L_n, L_e)`. `L_n` averages over nodes; `L_e`
/// averages over the pairs whose true relation is non-empty and is 0 when
/// there are none.
pub fn repr_loss(f: &mut Forward, pass: &ReprPass, truth: &SceneGraph) -> Result<(Var, Var)> {
    let model = f.model;
    let (cn, ce) = (model.arch.node_classes, model.arch.edge_classes);
    let m = truth.node_count();
    if f.tape.value(pass.node_logits).shape() != [m, cn] {
        return Err(Error::Shape {
            op: "repr_loss",
            lhs: f.tape.value(pass.node_logits).shape().to_vec(),
            rhs: vec![m, cn],
        });
    }
    truth.check_labels(cn, ce)?;
    let mut node_mask = vec![0.0; m * cn];
    for (i, &l) in truth.labels().iter().enumerate() {
        node_mask[i * cn + l] = 1.0;
    }
    let l_n = masked_ce(f, pass.node_logits, Tensor::matrix(m, cn, node_mask)?, m)?;

    let mut edge_mask = vec![0.0; pass.pairs.len() * ce];
    let mut count = 0;
    for (row, &(i, j)) in pass.pairs.iter().enumerate() {
        let r = truth.edge(i, j);
        if r != EMPTY_RELATION {
            edge_mask[row * ce + r] = 1.0;
            count += 1;
        }
    }
    let l_e = if count == 0 {
        warn!("scene has no non-empty relations; edge loss set to 0");
        f.tape.constant(Tensor::scalar(0.0))
    } else {
        masked_ce(f, pass.edge_logits, Tensor::matrix(pass.pairs.len(), ce, edge_mask)?, count)?
    };
    Ok((l_n, l_e))
}

/// `-sum(mask * log_softmax(logits)) / count`
fn masked_ce(f: &mut Forward, logits: Var, mask: Tensor, count: usize) -> Result<Var> {
    let logp = f.tape.log_softmax(logits)?;
    let mask = f.tape.constant(mask);
    let picked = f.tape.mul(logp, mask)?;
    let total = f.tape.sum(picked)?;
    f.tape.scale(total, -1.0 / count as f64)
}

/// Class probabilities of a scene: `V` (`m x c_n`) and `E` (`m x m x c_e`,
/// diagonal entries certain of the empty class).
#[derive(Clone, Debug)]
pub struct Representation {
    pub nodes: Tensor,
    pub edges: Tensor,
}

impl Representation {
    /// Graph of per-row argmax classes.
    pub fn to_graph(&self) -> SceneGraph {
        let m = self.nodes.rows();
        let ce = self.edges.shape()[2];
        let labels = (0..m).map(|i| argmax(self.nodes.row_slice(i))).collect();
        let mut g = SceneGraph::with_nodes(labels);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let start = (i * m + j) * ce;
                    let r = argmax(&self.edges.data()[start..start + ce]);
                    g.set_edge(i, j, r).expect("off-diagonal in range");
                }
            }
        }
        g
    }
}

/// Inference-mode representation of a point cloud.
pub fn represent(model: &ModelParams, points: &Tensor, indicator: &[usize], m: usize) -> Result<Representation> {
    let plan = Plan::new(&model.arch);
    let mut f = Forward::inference(model);
    let pass = forward(&mut f, &plan, points, indicator, m)?;
    let nodes = softmax_rows(f.tape.value(pass.node_logits))?;
    let ce = model.arch.edge_classes;
    let mut edges = vec![0.0; m * m * ce];
    for i in 0..m {
        edges[(i * m + i) * ce + EMPTY_RELATION] = 1.0;
    }
    if !pass.pairs.is_empty() {
        let probs = softmax_rows(f.tape.value(pass.edge_logits))?;
        for (row, &(i, j)) in pass.pairs.iter().enumerate() {
            edges[(i * m + j) * ce..(i * m + j + 1) * ce].copy_from_slice(probs.row_slice(row));
        }
    }
    Ok(Representation {
        nodes,
        edges: Tensor::new(vec![m, m, ce], edges)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::Architecture;
    use crate::numeric::AdamState;
    use crate::scene::{synth_corpus, GrammarConfig};

    fn model(seed: u64) -> ModelParams {
        ModelParams::init(Architecture::new(6, 27, 17), String::new(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn shuffled(points: &Tensor, indicator: &[usize], rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
        let mut order: Vec<usize> = (0..indicator.len()).collect();
        order.shuffle(rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&p| points.row_slice(p).to_vec()).collect();
        (Tensor::from_rows(&rows).unwrap(), order.iter().map(|&p| indicator[p]).collect())
    }

    #[test]
    fn point_order_and_duplication_invariance() {
        let m = model(2);
        let scene = &synth_corpus(&GrammarConfig::default(), 1, 5).unwrap()[0];
        let n = scene.instance_count();
        let base = represent(&m, &scene.points, &scene.indicator, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, ind) = shuffled(&scene.points, &scene.indicator, &mut rng);
        let other = represent(&m, &p, &ind, n).unwrap();
        assert!(base.nodes.max_abs_diff(&other.nodes) < 1e-9);
        assert!(base.edges.max_abs_diff(&other.edges) < 1e-9);

        let plan = Plan::new(&m.arch);
        let encode = |points: &Tensor, ind: &[usize]| {
            let mut f = Forward::inference(&m);
            let x = encode_instances(&mut f, &plan, points, ind, n).unwrap();
            f.tape.value(x).clone()
        };
        let mut doubled = scene.points.data().to_vec();
        doubled.extend_from_slice(scene.points.data());
        let doubled = Tensor::matrix(2 * scene.points.rows(), 6, doubled).unwrap();
        let ind2: Vec<usize> = scene.indicator.iter().chain(&scene.indicator).copied().collect();
        assert!(encode(&scene.points, &scene.indicator).max_abs_diff(&encode(&doubled, &ind2)) < 1e-12);
    }

    #[test]
    fn zero_final_layer_gives_bias_rows() {
        let mut m = model(3);
        m.zero_where(|n| n == "repr.point.2.w");
        let bias = m.param("repr.point.2.b").unwrap().clone();
        let scene = &synth_corpus(&GrammarConfig::default(), 1, 6).unwrap()[0];
        let plan = Plan::new(&m.arch);
        let mut f = Forward::inference(&m);
        let x = encode_instances(&mut f, &plan, &scene.points, &scene.indicator, scene.instance_count()).unwrap();
        let x = f.tape.value(x);
        for k in 0..x.rows() {
            assert_eq!(x.row_slice(k), bias.data());
        }
    }

    #[test]
    fn edge_init_is_antisymmetric() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![-3.0, 0.5]]).unwrap();
        let e = edge_init_full(&x);
        let d = 2;
        let at = |i: usize, j: usize| &e.data()[(i * 3 + j) * d..(i * 3 + j + 1) * d];
        for i in 0..3 {
            assert!(at(i, i).iter().all(|&v| v == 0.0));
            for j in 0..3 {
                let neg: Vec<f64> = at(j, i).iter().map(|v| -v).collect();
                assert_eq!(at(i, j), neg.as_slice());
            }
        }
        assert_eq!(at(0, 1), x.row_slice(0));
    }

    fn losses_for(node_logits: Tensor, edge_logits: Tensor, truth: &SceneGraph) -> (f64, f64) {
        let m = model(1);
        let mut f = Forward::inference(&m);
        let pass = ReprPass {
            x_v: f.tape.constant(Tensor::zeros(&[1, 1])),
            node_logits: f.tape.constant(node_logits),
            edge_logits: f.tape.constant(edge_logits),
            pairs: off_diagonal_pairs(truth.node_count()),
        };
        let (ln, le) = repr_loss(&mut f, &pass, truth).unwrap();
        (f.tape.value(ln).item(), f.tape.value(le).item())
    }

    #[test]
    fn cross_entropy_reference_values() {
        let truth = SceneGraph::from_edges(vec![0, 5, 9], &[(1, 0, 3), (2, 1, 4)]).unwrap();
        let pairs = off_diagonal_pairs(3);
        let uniform = losses_for(Tensor::zeros(&[3, 27]), Tensor::zeros(&[6, 17]), &truth);
        assert!((uniform.0 - 27f64.ln()).abs() < 1e-12);
        assert!((uniform.1 - 17f64.ln()).abs() < 1e-12);

        let mut nl = Tensor::full(&[3, 27], -20.0);
        for (i, &l) in truth.labels().iter().enumerate() {
            nl.data_mut()[i * 27 + l] = 20.0;
        }
        let mut el = Tensor::full(&[6, 17], -20.0);
        for (row, &(i, j)) in pairs.iter().enumerate() {
            el.data_mut()[row * 17 + truth.edge(i, j)] = 20.0;
        }
        let perfect = losses_for(nl, el.clone(), &truth);
        assert!(perfect.0 < 1e-3 && perfect.1 < 1e-3);

        // predictions at pairs whose true relation is empty do not matter
        let mut el2 = el.clone();
        let masked_row = pairs.iter().position(|&p| p == (0, 2)).unwrap();
        el2.data_mut()[masked_row * 17 + 7] = 50.0;
        let a = losses_for(Tensor::zeros(&[3, 27]), el, &truth).1;
        let b = losses_for(Tensor::zeros(&[3, 27]), el2, &truth).1;
        assert_eq!(a, b);

        let empty = SceneGraph::with_nodes(vec![1, 2]);
        assert_eq!(losses_for(Tensor::zeros(&[2, 27]), Tensor::zeros(&[2, 17]), &empty).1, 0.0);
    }

    #[test]
    fn node_probabilities_sum_to_one() {
        let m = model(4);
        let scene = &synth_corpus(&GrammarConfig::default(), 1, 8).unwrap()[0];
        let r = represent(&m, &scene.points, &scene.indicator, scene.instance_count()).unwrap();
        for i in 0..r.nodes.rows() {
            assert!((r.nodes.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_halves_representation_loss() {
        let mut m = model(5);
        let plan = Plan::new(&m.arch);
        let scenes = synth_corpus(&GrammarConfig::default(), 2, 11).unwrap();
        let mut adam = AdamState::new(Default::default());
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..200 {
            let mut total = 0.0;
            let mut acc: std::collections::BTreeMap<String, Tensor> = Default::default();
            let mut updates = Vec::new();
            for s in &scenes {
                let mut f = Forward::training(&m);
                let pass = forward(&mut f, &plan, &s.points, &s.indicator, s.instance_count()).unwrap();
                let (ln, le) = repr_loss(&mut f, &pass, &s.graph).unwrap();
                let l = f.tape.add(ln, le).unwrap();
                total += f.tape.value(l).item();
                let mut g = f.tape.backward(l).unwrap();
                for (k, v) in f.param_grads(&mut g) {
                    match acc.get_mut(&k) {
                        Some(a) => a.add_assign(&v),
                        None => {
                            acc.insert(k, v);
                        }
                    }
                }
                updates.extend_from_slice(f.bn_updates());
            }
            first.get_or_insert(total);
            last = total;
            adam.step(&mut m.params, &acc).unwrap();
            m.apply_bn_updates(&updates);
        }
        let first = first.unwrap();
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }
}
