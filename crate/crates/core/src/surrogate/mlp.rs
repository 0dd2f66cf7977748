use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{quantize_f64, LabeledSet, MlpParams, SurrogateError, QUANT_SCALE};
use crate::rational::{int, ratio, Rational};
use crate::schema::{DatasetSchema, Instance, Prediction};

/// Dense layer with parameters stored in thousandths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    /// `weights[j][i]`: from input `i` to neuron `j`.
    #[serde(with = "milli_matrix")]
    pub weights: Vec<Vec<i64>>,
    #[serde(with = "milli_vec")]
    pub biases: Vec<i64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.biases.len()
    }

    pub fn weight(&self, j: usize, i: usize) -> Rational {
        ratio(self.weights[j][i], QUANT_SCALE)
    }

    pub fn bias(&self, j: usize) -> Rational {
        ratio(self.biases[j], QUANT_SCALE)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OutputMode {
    /// Single label; output neuron `c` stands for `classes[c]`.
    Argmax { classes: Vec<i64> },
    /// One output neuron per label; class 1 iff its input is at least `th`.
    Threshold {
        #[serde(with = "milli")]
        th: i64,
    },
}

/// Feed-forward ReLU network; the last layer is the output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSurrogate {
    pub layers: Vec<Layer>,
    pub mode: OutputMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub pre: Vec<Rational>,
    pub post: Vec<Rational>,
}

impl MlpSurrogate {
    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, Layer::inputs)
    }

    pub fn threshold(&self) -> Option<Rational> {
        match self.mode {
            OutputMode::Threshold { th } => Some(ratio(th, QUANT_SCALE)),
            OutputMode::Argmax { .. } => None,
        }
    }

    /// Exact per-layer inputs and outputs; hidden layers apply ReLU, the
    /// output layer is linear.
    pub fn trace(&self, x: &Instance) -> Vec<LayerTrace> {
        let zero = int(0);
        let mut current: Vec<Rational> = x.0.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let pre: Vec<Rational> = (0..layer.outputs())
                .map(|j| {
                    let mut acc = Rational::from_integer(layer.biases[j].into());
                    for (i, v) in current.iter().enumerate() {
                        let w = layer.weights[j][i];
                        if w != 0 {
                            acc += v * Rational::from_integer(w.into());
                        }
                    }
                    acc / int(QUANT_SCALE)
                })
                .collect();
            let post = if l + 1 == self.layers.len() {
                pre.clone()
            } else {
                pre.iter().map(|v| if *v > zero { v.clone() } else { zero.clone() }).collect()
            };
            current = post.clone();
            out.push(LayerTrace { pre, post });
        }
        out
    }

    pub fn decide(&self, output: &[Rational]) -> Prediction {
        match &self.mode {
            OutputMode::Argmax { classes } => {
                let mut best = 0;
                for c in 1..output.len() {
                    if output[c] > output[best] || (output[c] == output[best] && classes[c] < classes[best]) {
                        best = c;
                    }
                }
                Prediction::single(classes[best])
            }
            OutputMode::Threshold { th } => {
                let th = ratio(*th, QUANT_SCALE);
                Prediction(output.iter().map(|v| i64::from(*v >= th)).collect())
            }
        }
    }
}

/// Exact forward pass: output-layer pre-activations and the decision.
pub fn mlp_forward(net: &MlpSurrogate, x: &Instance) -> (Vec<Rational>, Prediction) {
    let trace = net.trace(x);
    let output = trace.last().map(|t| t.pre.clone()).unwrap_or_default();
    let z = net.decide(&output);
    (output, z)
}

struct Dense {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const LIMIT: f64 = 10.0;

fn forward(layers: &[Dense], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![x.to_vec()];
    for (l, layer) in layers.iter().enumerate() {
        let input = acts.last().unwrap();
        let mut out: Vec<f64> = layer
            .w
            .iter()
            .zip(&layer.b)
            .map(|(row, b)| row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        if l + 1 < layers.len() {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        acts.push(out);
    }
    acts
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

enum Targets {
    Class(Vec<usize>),
    Bits(Vec<Vec<f64>>),
}

/// Mini-batch Adam on softmax cross-entropy (single label) or per-label
/// sigmoid cross-entropy (multilabel); parameters clamped to [-10, 10]
/// after each epoch and quantized at the end.
pub fn train_mlp(data: &LabeledSet, schema: &DatasetSchema, params: &MlpParams) -> Result<MlpSurrogate, SurrogateError> {
    if data.is_empty() {
        return Err(SurrogateError::EmptyData);
    }
    if params.hidden.iter().any(|&n| n == 0) || params.epochs == 0 || params.batch_size == 0 {
        return Err(SurrogateError::Params("hidden sizes, epochs and batch_size must be positive".into()));
    }
    let multilabel = schema.is_multilabel();
    let xs: Vec<Vec<f64>> = data.rows().iter().map(|(x, _)| x.to_f64()).collect();
    let (outputs, targets) = if multilabel {
        let bits = data.rows().iter().map(|(_, z)| z.0.iter().map(|&c| (c != 0) as u8 as f64).collect()).collect();
        (schema.l_size(), Targets::Bits(bits))
    } else {
        let classes = &schema.labels[0].classes;
        let idx = data
            .rows()
            .iter()
            .map(|(_, z)| {
                classes
                    .iter()
                    .position(|c| Some(c) == z.0.first())
                    .ok_or_else(|| SurrogateError::Params(format!("prediction {:?} does not fit the schema", z.0)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        (classes.len(), Targets::Class(idx))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sizes = vec![schema.f_size()];
    sizes.extend(&params.hidden);
    sizes.push(outputs);
    let mut layers: Vec<Dense> = sizes
        .windows(2)
        .map(|w| Dense {
            w: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-0.5..=0.5)).collect()).collect(),
            b: (0..w[1]).map(|_| rng.gen_range(-0.5..=0.5)).collect(),
        })
        .collect();
    let mut adam: Vec<(Adam, Adam)> = layers
        .iter()
        .map(|d| {
            let n = d.w.len() * d.w[0].len();
            (Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }, Adam { m: vec![0.0; d.b.len()], v: vec![0.0; d.b.len()], t: 0 })
        })
        .collect();

    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let mut gw: Vec<Vec<Vec<f64>>> = layers.iter().map(|d| vec![vec![0.0; d.w[0].len()]; d.w.len()]).collect();
            let mut gb: Vec<Vec<f64>> = layers.iter().map(|d| vec![0.0; d.b.len()]).collect();
            for &r in batch {
                let acts = forward(&layers, &xs[r]);
                let out = acts.last().unwrap();
                let mut delta: Vec<f64> = match &targets {
                    Targets::Class(idx) => {
                        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = out.iter().map(|v| (v - max).exp()).collect();
                        let total: f64 = exps.iter().sum();
                        exps.iter().enumerate().map(|(c, e)| e / total - (c == idx[r]) as u8 as f64).collect()
                    }
                    Targets::Bits(bits) => out.iter().zip(&bits[r]).map(|(v, y)| sigmoid(*v) - y).collect(),
                };
                for l in (0..layers.len()).rev() {
                    let input = &acts[l];
                    for (j, d) in delta.iter().enumerate() {
                        gb[l][j] += d;
                        for (i, v) in input.iter().enumerate() {
                            gw[l][j][i] += d * v;
                        }
                    }
                    if l > 0 {
                        delta = (0..input.len())
                            .map(|i| {
                                if input[i] <= 0.0 {
                                    return 0.0;
                                }
                                delta.iter().enumerate().map(|(j, d)| d * layers[l].w[j][i]).sum()
                            })
                            .collect();
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (l, layer) in layers.iter_mut().enumerate() {
                let flat: Vec<f64> = gw[l].iter().flatten().map(|g| g * scale).collect();
                let mut params_w: Vec<f64> = layer.w.iter().flatten().copied().collect();
                adam_step(&mut adam[l].0, &mut params_w, &flat, params.learning_rate);
                let width = layer.w[0].len();
                for (j, row) in layer.w.iter_mut().enumerate() {
                    row.copy_from_slice(&params_w[j * width..(j + 1) * width]);
                }
                let gbias: Vec<f64> = gb[l].iter().map(|g| g * scale).collect();
                adam_step(&mut adam[l].1, &mut layer.b, &gbias, params.learning_rate);
            }
        }
        for layer in &mut layers {
            for v in layer.w.iter_mut().flatten().chain(layer.b.iter_mut()) {
                *v = v.clamp(-LIMIT, LIMIT);
            }
        }
    }

    let quantized: Vec<Layer> = layers
        .iter()
        .map(|d| Layer {
            weights: d.w.iter().map(|row| row.iter().map(|&w| quantize_f64(w)).collect()).collect(),
            biases: d.b.iter().map(|&b| quantize_f64(b)).collect(),
        })
        .collect();
    let mode = match &targets {
        Targets::Class(_) => OutputMode::Argmax { classes: schema.labels[0].classes.clone() },
        Targets::Bits(bits) => OutputMode::Threshold { th: best_threshold(&quantized, &xs, bits) },
    };
    Ok(MlpSurrogate { layers: quantized, mode })
}

fn adam_step(state: &mut Adam, params: &mut [f64], grads: &[f64], lr: f64) {
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t);
    let c2 = 1.0 - BETA2.powi(state.t);
    for k in 0..params.len() {
        state.m[k] = BETA1 * state.m[k] + (1.0 - BETA1) * grads[k];
        state.v[k] = BETA2 * state.v[k] + (1.0 - BETA2) * grads[k] * grads[k];
        params[k] -= lr * (state.m[k] / c1) / ((state.v[k] / c2).sqrt() + ADAM_EPS);
    }
}

/// Shared decision threshold (thousandths) maximizing micro-F1 on the
/// training rows under the quantized network.
fn best_threshold(layers: &[Layer], xs: &[Vec<f64>], bits: &[Vec<f64>]) -> i64 {
    let dense: Vec<Dense> = layers
        .iter()
        .map(|l| Dense {
            w: l.weights.iter().map(|r| r.iter().map(|&w| w as f64 / QUANT_SCALE as f64).collect()).collect(),
            b: l.biases.iter().map(|&b| b as f64 / QUANT_SCALE as f64).collect(),
        })
        .collect();
    let outputs: Vec<Vec<f64>> = xs.iter().map(|x| forward(&dense, x).pop().unwrap()).collect();
    let mut candidates: Vec<i64> = outputs.iter().flatten().map(|&v| quantize_f64(v)).collect();
    candidates.push(0);
    candidates.push(quantize_f64(LIMIT * 1000.0));
    candidates.sort_unstable();
    candidates.dedup();
    let f1 = |th: i64| {
        let t = th as f64 / QUANT_SCALE as f64;
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (out, ys) in outputs.iter().zip(bits) {
            for (v, y) in out.iter().zip(ys) {
                match (*v >= t, *y > 0.5) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
        }
        let denom = 2 * tp + fp + fneg;
        if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, 0i64);
    for th in candidates {
        let score = f1(th);
        let closer = th.abs() < best.1.abs() || (th.abs() == best.1.abs() && th < best.1);
        if score > best.0 + 1e-12 || ((score - best.0).abs() <= 1e-12 && closer) {
            best = (score, th);
        }
    }
    best.1
}

fn fmt_milli(v: i64) -> String {
    let sign = if v < 0 { "-" } else { "" };
    format!("{sign}{}.{:03}", v.abs() / QUANT_SCALE, v.abs() % QUANT_SCALE)
}

fn parse_milli(text: &str) -> Option<i64> {
    let q = crate::rational::parse_rational(text)? * int(QUANT_SCALE);
    q.is_integer().then(|| num_traits::ToPrimitive::to_i64(&q.to_integer())).flatten()
}

mod milli {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::fmt_milli(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_milli(&text).ok_or_else(|| D::Error::custom(format!("`{text}` is not a 3-decimal value")))
    }
}

mod milli_vec {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[i64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| super::fmt_milli(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<i64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| super::parse_milli(t).ok_or_else(|| D::Error::custom(format!("`{t}` is not a 3-decimal value"))))
            .collect()
    }
}

mod milli_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(transparent)]
    struct Row(#[serde(with = "super::milli_vec")] Vec<i64>);

    pub fn serialize<S: Serializer>(m: &[Vec<i64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|r| Row(r.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<i64>>, D::Error> {
        Ok(Vec::<Row>::deserialize(d)?.into_iter().map(|r| r.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{from_f64, to_f64};
    use crate::schema::{FeatureSpec, LabelSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_schema(n: usize, labels: Vec<LabelSpec>) -> DatasetSchema {
        DatasetSchema::new((0..n).map(|i| FeatureSpec::continuous(&format!("u{i}"), int(0), int(1))).collect(), labels)
            .unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], mode: OutputMode) -> MlpSurrogate {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-10_000..=10_000)).collect()).collect(),
                biases: (0..w[1]).map(|_| rng.gen_range(-10_000..=10_000)).collect(),
            })
            .collect();
        MlpSurrogate { layers, mode }
    }

    #[test]
    fn relu_negative_branch() {
        let net = MlpSurrogate {
            layers: vec![
                Layer { weights: vec![vec![1000]], biases: vec![-1000] },
                Layer { weights: vec![vec![1000], vec![-1000]], biases: vec![0, 0] },
            ],
            mode: OutputMode::Argmax { classes: vec![0, 1] },
        };
        let trace = net.trace(&Instance(vec![ratio(1, 2)]));
        assert_eq!(trace[0].pre, vec![ratio(-1, 2)]);
        assert_eq!(trace[0].post, vec![int(0)]);
    }

    #[test]
    fn argmax_ties_go_to_the_smallest_code() {
        let net = MlpSurrogate {
            layers: vec![Layer { weights: vec![vec![1000, 0], vec![0, 1000]], biases: vec![0, 0] }],
            mode: OutputMode::Argmax { classes: vec![0, 1] },
        };
        let (out, z) = mlp_forward(&net, &Instance(vec![ratio(16, 5), ratio(16, 5)]));
        assert_eq!(out, vec![ratio(16, 5), ratio(16, 5)]);
        assert_eq!(z, Prediction::single(0));
        let swapped = MlpSurrogate { mode: OutputMode::Argmax { classes: vec![7, 3] }, ..net };
        assert_eq!(mlp_forward(&swapped, &Instance(vec![int(1), int(1)])).1, Prediction::single(3));
    }

    #[test]
    fn threshold_boundary_counts_as_positive() {
        let net = MlpSurrogate {
            layers: vec![Layer { weights: vec![vec![1000], vec![-1000]], biases: vec![0, 0] }],
            mode: OutputMode::Threshold { th: 0 },
        };
        assert_eq!(mlp_forward(&net, &Instance(vec![int(0)])).1, Prediction(vec![1, 1]));
        assert_eq!(mlp_forward(&net, &Instance(vec![ratio(1, 10)])).1, Prediction(vec![1, 0]));
    }

    #[test]
    fn constant_data_trains_a_constant_net() {
        let schema = unit_schema(3, vec![LabelSpec::new("lab", &[0, 1, 2])]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: LabeledSet = (0..200).map(|_| (schema.random_instance(&mut rng), Prediction::single(0))).collect();
        let net = train_mlp(&data, &schema, &MlpParams::default()).unwrap();
        let hits = (0..1000)
            .filter(|_| mlp_forward(&net, &schema.random_instance(&mut rng)).1 == Prediction::single(0))
            .count();
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn separable_data_is_learned() {
        let schema = unit_schema(2, vec![LabelSpec::boolean("lab")]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: LabeledSet = (0..300)
            .map(|_| {
                let x = schema.random_instance(&mut rng);
                let z = i64::from(x.0[0].clone() + x.0[1].clone() > int(1));
                (x, Prediction::single(z))
            })
            .collect();
        let net = train_mlp(&data, &schema, &MlpParams::default()).unwrap();
        let hits = data.rows().iter().filter(|(x, z)| &mlp_forward(&net, x).1 == z).count();
        assert!(hits as f64 >= 0.95 * data.len() as f64, "{hits}/{}", data.len());
        for p in net.layers.iter().flat_map(|l| l.weights.iter().flatten().chain(&l.biases)) {
            assert!((-10_000..=10_000).contains(p));
        }
    }

    #[test]
    fn multilabel_nets_learn_a_threshold() {
        let schema = unit_schema(2, vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let half = ratio(1, 2);
        let data: LabeledSet = (0..300)
            .map(|_| {
                let x = schema.random_instance(&mut rng);
                let dog = x.0[0] > half && x.0[1] > half;
                (x, if dog { Prediction(vec![1, 0]) } else { Prediction(vec![0, 1]) })
            })
            .collect();
        let net = train_mlp(&data, &schema, &MlpParams::default()).unwrap();
        assert!(matches!(net.mode, OutputMode::Threshold { .. }));
        let hits = data.rows().iter().filter(|(x, z)| &mlp_forward(&net, x).1 == z).count();
        assert!(hits as f64 >= 0.9 * data.len() as f64, "{hits}/{}", data.len());
    }

    #[test]
    fn training_is_deterministic_and_serializes() {
        let schema = unit_schema(2, vec![LabelSpec::boolean("lab")]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: LabeledSet = (0..50)
            .map(|_| {
                let x = schema.random_instance(&mut rng);
                let z = i64::from(x.0[0] > x.0[1]);
                (x, Prediction::single(z))
            })
            .collect();
        let params = MlpParams { epochs: 20, seed: 42, ..MlpParams::default() };
        let a = train_mlp(&data, &schema, &params).unwrap();
        let b = train_mlp(&data, &schema, &params).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains('.'));
        let back: MlpSurrogate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn empty_data_is_an_error() {
        let schema = unit_schema(1, vec![LabelSpec::boolean("lab")]);
        assert_eq!(train_mlp(&LabeledSet::new(), &schema, &MlpParams::default()).unwrap_err(), SurrogateError::EmptyData);
    }

    #[test]
    fn milli_formatting() {
        assert_eq!(fmt_milli(-3142), "-3.142");
        assert_eq!(fmt_milli(5), "0.005");
        assert_eq!(fmt_milli(-5), "-0.005");
        assert_eq!(parse_milli("-0.005"), Some(-5));
        assert_eq!(parse_milli("0.0005"), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_forward_matches_float_forward(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, &[5, 10, 10, 3], OutputMode::Argmax { classes: vec![0, 1, 2] });
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = net.trace(&Instance(x.iter().map(|&v| from_f64(v).unwrap()).collect()));
            let dense: Vec<Dense> = net.layers.iter().map(|l| Dense {
                w: l.weights.iter().map(|r| r.iter().map(|&w| w as f64 / 1000.0).collect()).collect(),
                b: l.biases.iter().map(|&b| b as f64 / 1000.0).collect(),
            }).collect();
            let acts = forward(&dense, &x);
            let float_out = &acts[acts.len() - 1];
            for (e, f) in exact.last().unwrap().pre.iter().zip(float_out) {
                prop_assert!((to_f64(e) - f).abs() <= 1e-9, "{} vs {}", to_f64(e), f);
            }
        }
    }
}
