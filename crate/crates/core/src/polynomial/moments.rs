//! Lebesgue moments `∫_X x^α dx` of boxes and balls, and user-supplied
//! moment tables for other domains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Basis, MultiIndex, PolyError, Polynomial, Result};

/// Integration domain for moment computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DomainKind {
    /// Axis-aligned box, one `(lo, hi)` per coordinate.
    Box(Vec<(f64, f64)>),
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    General(MomentTable),
}

/// Moments of a general domain, keyed by exponent tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub dim: usize,
    #[serde(with = "tuple_keys")]
    pub moments: BTreeMap<MultiIndex, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounding_box: Option<Vec<(f64, f64)>>,
}

impl MomentTable {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("moment table serializes")
    }
}

/// JSON maps need string keys; exponent tuples are written `"a1,a2,...,an"`.
mod tuple_keys {
    use super::MultiIndex;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<MultiIndex, f64>, s: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, f64> = m.iter().map(|(k, v)| (key(k), *v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MultiIndex, f64>, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let exps = if k.trim().is_empty() {
                    Vec::new()
                } else {
                    k.split(',')
                        .map(|t| t.trim().parse::<u32>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| D::Error::custom(format!("bad exponent key {k:?}: {e}")))?
                };
                Ok((MultiIndex::new(exps), v))
            })
            .collect()
    }

    pub fn key(k: &MultiIndex) -> String {
        k.exponents()
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Exports a moment map as a JSON object keyed by exponent tuple.
pub fn moments_to_json(moments: &BTreeMap<MultiIndex, f64>) -> serde_json::Value {
    serde_json::Value::Object(
        moments
            .iter()
            .map(|(k, v)| (tuple_keys::key(k), serde_json::json!(v)))
            .collect(),
    )
}

/// All moments of total degree at most `max_degree`.
///
/// Box and ball moments are analytic. For domains symmetric about the origin
/// the odd moments come out exactly zero.
pub fn lebesgue_moments(domain: &DomainKind, dim: usize, max_degree: u32) -> Result<BTreeMap<MultiIndex, f64>> {
    let indices = MultiIndex::all_up_to(dim, max_degree);
    match domain {
        DomainKind::Box(bounds) => {
            if bounds.len() != dim {
                return Err(PolyError::DimMismatch(bounds.len(), dim));
            }
            let per_axis: Vec<Vec<f64>> = bounds
                .iter()
                .map(|&(a, b)| {
                    (0..=max_degree as i32)
                        .map(|k| (b.powi(k + 1) - a.powi(k + 1)) / (k + 1) as f64)
                        .collect()
                })
                .collect();
            Ok(indices
                .into_iter()
                .map(|idx| {
                    let m = idx
                        .exponents()
                        .iter()
                        .zip(&per_axis)
                        .map(|(&e, ax)| ax[e as usize])
                        .product();
                    (idx, m)
                })
                .collect())
        }
        DomainKind::Ball { center, radius } => {
            if center.len() != dim {
                return Err(PolyError::DimMismatch(center.len(), dim));
            }
            let unit: BTreeMap<MultiIndex, f64> =
                indices.iter().map(|idx| (idx.clone(), unit_ball_moment(idx))).collect();
            let vol_scale = radius.powi(dim as i32);
            Ok(indices
                .into_iter()
                .map(|idx| {
                    let m = if center.iter().all(|&c| c == 0.0) {
                        vol_scale * radius.powi(idx.degree() as i32) * unit[&idx]
                    } else {
                        vol_scale * shifted_moment(&idx, center, *radius, &unit)
                    };
                    (idx, m)
                })
                .collect())
        }
        DomainKind::General(table) => {
            if table.dim != dim {
                return Err(PolyError::DimMismatch(table.dim, dim));
            }
            indices
                .into_iter()
                .map(|idx| match table.moments.get(&idx) {
                    Some(&m) => Ok((idx, m)),
                    None => Err(PolyError::MissingMoment(idx)),
                })
                .collect()
        }
    }
}

/// `∫ p dx` from a moment map; `p` is converted to the monomial basis first.
pub fn integrate(p: &Polynomial, moments: &BTreeMap<MultiIndex, f64>) -> Result<f64> {
    let mono = p.convert_basis(Basis::Monomial);
    let mut sum = 0.0;
    for (idx, c) in mono.terms() {
        let m = moments.get(idx).ok_or_else(|| PolyError::MissingMoment(idx.clone()))?;
        sum += c * m;
    }
    Ok(sum)
}

// ∫_{|y|<=1} y^α dy = 2 Π Γ(b_i) / (Γ(Σ b_i) (|α| + n)),  b_i = (α_i + 1)/2,
// and zero if any α_i is odd.
fn unit_ball_moment(idx: &MultiIndex) -> f64 {
    let e = idx.exponents();
    if e.iter().any(|&a| a % 2 == 1) {
        return 0.0;
    }
    let n = e.len() as u32;
    let num: f64 = e.iter().map(|&a| gamma_half(a + 1)).product();
    2.0 * num / (gamma_half(idx.degree() + n) * (idx.degree() + n) as f64)
}

/// Γ(k/2) for integer k >= 1.
fn gamma_half(k: u32) -> f64 {
    assert!(k >= 1);
    let (mut g, mut s) = if k % 2 == 0 {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    let target = k as f64 / 2.0;
    while s < target {
        g *= s;
        s += 1.0;
    }
    g
}

// (c + r y)^α expanded with binomials and integrated over the unit ball.
fn shifted_moment(idx: &MultiIndex, center: &[f64], radius: f64, unit: &BTreeMap<MultiIndex, f64>) -> f64 {
    let e = idx.exponents();
    let mut total = 0.0;
    let mut sub = vec![0u32; e.len()];
    loop {
        let mut w = 1.0;
        for k in 0..e.len() {
            w *= binom(e[k], sub[k]) * center[k].powi((e[k] - sub[k]) as i32);
        }
        let b = MultiIndex::new(sub.clone());
        w *= radius.powi(b.degree() as i32) * unit[&b];
        total += w;
        // odometer over 0..=e_k
        let mut k = 0;
        loop {
            if k == e.len() {
                return total;
            }
            if sub[k] < e[k] {
                sub[k] += 1;
                break;
            }
            sub[k] = 0;
            k += 1;
        }
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn idx(e: &[u32]) -> MultiIndex {
        MultiIndex::new(e.to_vec())
    }

    #[test]
    fn box_moments() {
        let m = lebesgue_moments(&DomainKind::Box(vec![(-1.0, 1.0)]), 1, 4).unwrap();
        assert_eq!(m[&idx(&[0])], 2.0);
        assert_eq!(m[&idx(&[3])], 0.0);
        let m2 = lebesgue_moments(&DomainKind::Box(vec![(-1.0, 1.0); 2]), 2, 4).unwrap();
        assert!((m2[&idx(&[2, 0])] - 4.0 / 3.0).abs() < 1e-15);
        let m3 = lebesgue_moments(&DomainKind::Box(vec![(0.0, 2.0)]), 1, 2).unwrap();
        assert!((m3[&idx(&[2])] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disk_moments_match_polar_quadrature() {
        let m = lebesgue_moments(
            &DomainKind::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            2,
            6,
        )
        .unwrap();
        assert!((m[&idx(&[0, 0])] - PI).abs() < 1e-14);
        assert!((m[&idx(&[2, 0])] - PI / 4.0).abs() < 1e-14);
        // midpoint rule in polar coordinates over ∫∫ r^{a+b+1} cos^a sin^b
        let (nr, nt) = (400, 400);
        for e in [[2u32, 0], [2, 2], [4, 0], [0, 6], [4, 2], [1, 1]] {
            let mut q = 0.0;
            for i in 0..nr {
                let r = (i as f64 + 0.5) / nr as f64;
                for j in 0..nt {
                    let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                    q += (r * t.cos()).powi(e[0] as i32) * (r * t.sin()).powi(e[1] as i32) * r;
                }
            }
            q *= 2.0 * PI / (nr * nt) as f64;
            assert!((q - m[&idx(&e)]).abs() < 1e-4, "{e:?}: {q} vs {}", m[&idx(&e)]);
        }
    }

    #[test]
    fn symmetric_odd_moments_are_exactly_zero() {
        let ball = lebesgue_moments(
            &DomainKind::Ball {
                center: vec![0.0; 3],
                radius: 0.7,
            },
            3,
            7,
        )
        .unwrap();
        let bx = lebesgue_moments(&DomainKind::Box(vec![(-0.3, 0.3); 3]), 3, 7).unwrap();
        for (k, v) in ball.iter().chain(bx.iter()) {
            if k.exponents().iter().any(|e| e % 2 == 1) {
                assert_eq!(*v, 0.0, "{k:?}");
            }
        }
    }

    #[test]
    fn shifted_ball_matches_substitution() {
        let dom = DomainKind::Ball {
            center: vec![0.525, 0.525],
            radius: 0.475,
        };
        let m = lebesgue_moments(&dom, 2, 4).unwrap();
        let unit = lebesgue_moments(
            &DomainKind::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            2,
            4,
        )
        .unwrap();
        let p = Polynomial::from_terms(2, Basis::Monomial, [(idx(&[2, 1]), 1.0), (idx(&[0, 0]), 2.0)]);
        let q = vec![vec![0.475, 0.0], vec![0.0, 0.475]];
        let sub = p.affine_substitute(&q, &[0.525, 0.525]).unwrap();
        let direct = integrate(&p, &m).unwrap();
        let via = 0.475f64.powi(2) * integrate(&sub, &unit).unwrap();
        assert!((direct - via).abs() < 1e-14);
    }

    #[test]
    fn integrate_examples() {
        let sq = lebesgue_moments(&DomainKind::Box(vec![(-1.0, 1.0); 2]), 2, 2).unwrap();
        assert_eq!(
            integrate(&Polynomial::constant(2, Basis::Monomial, 1.0), &sq).unwrap(),
            4.0
        );
        let line = lebesgue_moments(&DomainKind::Box(vec![(-1.0, 1.0)]), 1, 2).unwrap();
        let x2 = Polynomial::from_terms(1, Basis::Chebyshev, [(idx(&[0]), 0.5), (idx(&[2]), 0.5)]);
        assert!((integrate(&x2, &line).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let disk = lebesgue_moments(
            &DomainKind::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            2,
            2,
        )
        .unwrap();
        let odd = Polynomial::from_terms(2, Basis::Monomial, [(idx(&[1, 0]), 1.0), (idx(&[0, 1]), 1.0)]);
        assert_eq!(integrate(&odd, &disk).unwrap(), 0.0);
        let high = Polynomial::from_terms(2, Basis::Monomial, [(idx(&[3, 0]), 1.0)]);
        assert!(matches!(integrate(&high, &disk), Err(PolyError::MissingMoment(_))));
    }

    #[test]
    fn general_domain_needs_table() {
        let mut moments = BTreeMap::new();
        moments.insert(idx(&[0]), 1.0);
        moments.insert(idx(&[1]), 0.5);
        let table = MomentTable {
            dim: 1,
            moments,
            bounding_box: None,
        };
        let text = table.to_json();
        let back = MomentTable::from_json(&text).unwrap();
        assert_eq!(back, table);
        let dom = DomainKind::General(back);
        assert_eq!(lebesgue_moments(&dom, 1, 1).unwrap()[&idx(&[1])], 0.5);
        assert!(matches!(lebesgue_moments(&dom, 1, 2), Err(PolyError::MissingMoment(_))));
    }
}
