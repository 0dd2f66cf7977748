use rand::seq::SliceRandom;
use rand::Rng;

use crate::propdsl::{CmpOp, Condition, Expr, PropertySpec};
use crate::rational::Rational;
use crate::schema::{DatasetSchema, Instance};

type Slot = (usize, usize);

/// Draws inputs for a property, satisfying simple assume clauses by
/// construction and the rest by rejection.
///
/// `v[f] == literal` pins a feature, `v[f] == w[g]` copies an earlier
/// variable's value, and `v[f] != w[g]` makes sure the later value differs.
#[derive(Clone, Debug)]
pub struct AssumeSampler<'a> {
    spec: &'a PropertySpec,
    schema: &'a DatasetSchema,
    pins: Vec<(Slot, Rational)>,
    copies: Vec<(Slot, Slot)>,
    flips: Vec<(Slot, Slot)>,
}

fn flatten<'c>(c: &'c Condition, out: &mut Vec<&'c Condition>) {
    match c {
        Condition::And(parts) => parts.iter().for_each(|p| flatten(p, out)),
        other => out.push(other),
    }
}

impl<'a> AssumeSampler<'a> {
    pub fn new(spec: &'a PropertySpec, schema: &'a DatasetSchema) -> Self {
        let mut s = Self { spec, schema, pins: Vec::new(), copies: Vec::new(), flips: Vec::new() };
        let slot = |e: &Expr| match e {
            Expr::Feature { var, index } => spec.copy_index(var).map(|v| (v, *index)),
            _ => None,
        };
        let mut atoms = Vec::new();
        for a in &spec.assumes {
            flatten(&a.ast, &mut atoms);
        }
        for atom in atoms {
            let Condition::Cmp(op, l, r) = atom else { continue };
            match (op, slot(l), slot(r), l, r) {
                (CmpOp::Eq, Some(p), None, _, Expr::Lit(v)) | (CmpOp::Eq, None, Some(p), Expr::Lit(v), _) => {
                    s.pins.push((p, v.clone()));
                }
                (CmpOp::Eq, Some(a), Some(b), _, _) if a.0 != b.0 => {
                    let (src, dst) = if a.0 < b.0 { (a, b) } else { (b, a) };
                    s.copies.push((src, dst));
                }
                (CmpOp::Ne, Some(a), Some(b), _, _) if a.0 != b.0 => {
                    let (src, dst) = if a.0 < b.0 { (a, b) } else { (b, a) };
                    s.flips.push((src, dst));
                }
                _ => {}
            }
        }
        s
    }

    /// One constructive draw; may still violate assumes it cannot construct.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Instance> {
        let mut xs: Vec<Instance> =
            (0..self.spec.instance_vars.len()).map(|_| self.schema.random_instance(rng)).collect();
        for ((v, f), value) in &self.pins {
            xs[*v].0[*f] = value.clone();
        }
        for ((sv, sf), (dv, df)) in &self.copies {
            let value = xs[*sv].0[*sf].clone();
            xs[*dv].0[*df] = value;
        }
        for ((sv, sf), (dv, df)) in &self.flips {
            let source = xs[*sv].0[*sf].clone();
            if xs[*dv].0[*df] != source {
                continue;
            }
            let spec = &self.schema.features[*df];
            match spec.discrete_values() {
                Some(values) => {
                    let others: Vec<&Rational> = values.iter().filter(|v| **v != source).collect();
                    if let Some(v) = others.choose(rng) {
                        xs[*dv].0[*df] = (*v).clone();
                    }
                }
                None => {
                    for _ in 0..64 {
                        let v = self.schema.random_instance(rng).0[*df].clone();
                        if v != source {
                            xs[*dv].0[*df] = v;
                            break;
                        }
                    }
                }
            }
        }
        xs
    }

    /// Draws until every assume holds; returns the sample and the number
    /// of rejected draws, or `None` after `max_rejections` failures.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, max_rejections: u64) -> (Option<Vec<Instance>>, u64) {
        let mut rejected = 0;
        loop {
            let xs = self.draw(rng);
            let valid = xs.iter().all(|x| self.schema.validate_instance(x).is_ok());
            if valid && self.spec.assumes_hold(&xs).unwrap_or(false) {
                return (Some(xs), rejected);
            }
            rejected += 1;
            if rejected >= max_rejections {
                return (None, rejected);
            }
        }
    }
}
