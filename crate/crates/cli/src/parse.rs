//! Parsers for the compact command-line forms of domains, states and lists.

use darnwalk::diffusion::{BoundarySet, DarnedState, Domain};
use darnwalk::harmonic::BoundaryValues;

use crate::failure::Failure;

fn number(s: &str) -> Result<f64, Failure> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Failure::parse(format!("not a number: {s:?}")))
}

fn integer(s: &str) -> Result<i64, Failure> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| Failure::parse(format!("not an integer: {s:?}")))
}

/// `1,2.5,3`
pub fn numbers(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(number)
        .collect()
}

/// `0.25:0.5,0.1:0.2`
pub fn pairs(s: &str) -> Result<Vec<(f64, f64)>, Failure> {
    s.split(',')
        .map(|p| match p.split_once(':') {
            Some((a, b)) => Ok((number(a)?, number(b)?)),
            None => Err(Failure::parse(format!("expected r:t, got {p:?}"))),
        })
        .collect()
}

/// `x0`, or `COMPONENT:x,y,z`.
pub fn state(s: &str) -> Result<DarnedState, Failure> {
    let s = s.trim();
    if s == "x0" {
        return Ok(DarnedState::AtDarned);
    }
    match s.split_once(':') {
        Some((c, coords)) => Ok(DarnedState::point(integer(c)?, numbers(coords)?)),
        None => Err(Failure::parse(format!(
            "expected x0 or COMPONENT:x,y,.., got {s:?}"
        ))),
    }
}

/// States separated by `;`.
pub fn states(s: &str) -> Result<Vec<DarnedState>, Failure> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(state)
        .collect()
}

/// `ut:T`, `at:T`, `ball:C:x,y:R`, `annulus:C:x,y:R1:R2`, or a JSON object.
pub fn domain(s: &str) -> Result<Domain, Failure> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| Failure::parse(format!("domain: {e}")));
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["ut", t] => Ok(Domain::Darned { t: number(t)? }),
        ["at", t] => Ok(Domain::Level { t: number(t)? }),
        ["ball", c, center, r] => Ok(Domain::Ball {
            component: integer(c)?,
            center: numbers(center)?,
            radius: number(r)?,
        }),
        ["annulus", c, center, r1, r2] => Ok(Domain::Annulus {
            component: integer(c)?,
            center: numbers(center)?,
            inner: number(r1)?,
            outer: number(r2)?,
        }),
        _ => Err(Failure::parse(format!("unrecognized domain {s:?}"))),
    }
}

/// `constant:C`, `indicator:SHELL:T`, `x0`, or a JSON object.
pub fn boundary(s: &str) -> Result<BoundaryValues, Failure> {
    let s = s.trim();
    if s.starts_with('{') {
        return serde_json::from_str(s).map_err(|e| Failure::parse(format!("boundary: {e}")));
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["constant", c] => Ok(BoundaryValues::constant(number(c)?)),
        ["indicator", j, t] => Ok(BoundaryValues::indicator(BoundarySet::LevelSphere {
            shell: integer(j)? as usize,
            t: number(t)?,
        })),
        ["x0"] => Ok(BoundaryValues::indicator(BoundarySet::Darned)),
        _ => Err(Failure::parse(format!("unrecognized boundary data {s:?}"))),
    }
}

/// Target sets for exit-kernel tables, read off the domain's pieces.
pub fn partition(domain: &Domain, n_shells: usize) -> Vec<BoundarySet> {
    let mut out = Vec::new();
    collect(domain, n_shells, &mut out);
    out
}

fn collect(domain: &Domain, n_shells: usize, out: &mut Vec<BoundarySet>) {
    let mut add = |b: BoundarySet| {
        if !out.contains(&b) {
            out.push(b);
        }
    };
    match domain {
        Domain::Darned { t } => {
            (0..n_shells).for_each(|j| add(BoundarySet::LevelSphere { shell: j, t: *t }))
        }
        Domain::Level { t } => {
            (0..n_shells).for_each(|j| add(BoundarySet::LevelSphere { shell: j, t: *t }));
            add(BoundarySet::Darned);
        }
        Domain::Ball {
            component,
            center,
            radius,
        } => add(BoundarySet::Sphere {
            component: *component,
            center: center.clone(),
            radius: *radius,
        }),
        Domain::Annulus {
            component,
            center,
            inner,
            outer,
        } => {
            for r in [inner, outer] {
                add(BoundarySet::Sphere {
                    component: *component,
                    center: center.clone(),
                    radius: *r,
                });
            }
        }
        Domain::Union { parts } | Domain::Intersection { parts } => {
            parts.iter().for_each(|p| collect(p, n_shells, out))
        }
        Domain::Complement { part } => collect(part, n_shells, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_forms() {
        assert_eq!(state("x0").unwrap(), DarnedState::AtDarned);
        assert_eq!(
            state("2:1,0,0.5").unwrap(),
            DarnedState::point(2, vec![1.0, 0.0, 0.5])
        );
        assert_eq!(domain("ut:0.5").unwrap(), Domain::Darned { t: 0.5 });
        assert_eq!(
            domain("ball:2:5,0,0:1").unwrap(),
            Domain::Ball {
                component: 2,
                center: vec![5.0, 0.0, 0.0],
                radius: 1.0
            }
        );
        assert_eq!(
            pairs("0.25:0.5,0.1:0.2").unwrap(),
            vec![(0.25, 0.5), (0.1, 0.2)]
        );
        assert!(domain("cube:1").is_err());
        assert!(state("1;2").is_err());
    }

    #[test]
    fn json_domain() {
        let d = domain(r#"{"type":"complement","part":{"type":"ut","t":0.5}}"#);
        assert!(d.is_err());
        let d = domain(r#"{"type":"complement","part":{"type":"darned","t":0.5}}"#).unwrap();
        assert!(!d.contains_x0());
    }
}
