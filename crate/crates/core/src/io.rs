//! Sectioned key-value system files.
//!
//! ```text
//! # comment
//! [generators]
//! # id = capacity cost pmin strike_up strike_down [ramp]
//! ST1 = 50 20 0 20 20
//! [uncertain]
//! # id = cost vc_up vc_down | triggers... | probabilities...
//! RE = 0 1000 0 | 131 141 155 165 172 | 0.2 0.2 0.2 0.2 0.2
//! [fleets]
//! fleet1 = 50 10 10 10 10
//! [config]
//! demand = 200
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{
    validate_system, DemandStep, Fleet, FlexibleResource, IrConfig, MarketConfig, ScenarioSet, System,
    UncertainResource,
};

const REFERENCE_SYSTEM: &str = include_str!("../data/reference_system.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("invalid system:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("bad override {0}: {1}")]
    Override(String, String),
}

fn line_err(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Line { line, msg: msg.into() }
}

fn number(line: usize, tok: &str) -> Result<f64, ParseError> {
    let v: f64 = tok.parse().map_err(|_| line_err(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(line_err(line, format!("non-finite number: {tok:?}")));
    }
    Ok(v)
}

fn numbers(line: usize, text: &str) -> Result<Vec<f64>, ParseError> {
    text.split_whitespace().map(|t| number(line, t)).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Generators,
    Uncertain,
    Fleets,
    Config,
}

/// Parses and validates a system file.
pub fn parse_system(text: &str) -> Result<System, ParseError> {
    let system = parse_unchecked(text)?;
    let problems = validate_system(&system);
    if problems.is_empty() {
        Ok(system)
    } else {
        Err(ParseError::Invalid(problems))
    }
}

/// Parses without running system validation.
pub fn parse_unchecked(text: &str) -> Result<System, ParseError> {
    let mut section = Section::None;
    let mut generators = Vec::new();
    let mut buyers = Vec::new();
    let mut fleets = Vec::new();
    let mut probabilities: Option<Vec<f64>> = None;
    let mut config = MarketConfig::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[generators]" => Section::Generators,
                "[uncertain]" => Section::Uncertain,
                "[fleets]" => Section::Fleets,
                "[config]" => Section::Config,
                other => return Err(line_err(line, format!("unknown section {other}"))),
            };
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| line_err(line, "expected key = value"))?;
        if key.is_empty() {
            return Err(line_err(line, "empty key"));
        }
        match section {
            Section::None => return Err(line_err(line, "entry outside any section")),
            Section::Generators => {
                let v = numbers(line, value)?;
                if v.len() != 5 && v.len() != 6 {
                    return Err(line_err(line, "generator needs capacity cost pmin strike_up strike_down [ramp]"));
                }
                generators.push(FlexibleResource {
                    id: key.to_string(),
                    capacity: v[0],
                    cost: v[1],
                    pmin: v[2],
                    strike_up: v[3],
                    strike_down: v[4],
                    ramp: v.get(5).copied().unwrap_or(v[0]),
                });
            }
            Section::Uncertain => {
                let parts: Vec<&str> = value.split('|').collect();
                if parts.len() != 3 {
                    return Err(line_err(line, "uncertain resource needs cost vc_up vc_down | triggers | probabilities"));
                }
                let head = numbers(line, parts[0])?;
                if head.len() != 3 {
                    return Err(line_err(line, "expected cost vc_up vc_down before the first '|'"));
                }
                let triggers = numbers(line, parts[1])?;
                let probs = numbers(line, parts[2])?;
                if triggers.len() != probs.len() {
                    return Err(line_err(line, "trigger and probability counts differ"));
                }
                match &probabilities {
                    None => probabilities = Some(probs),
                    Some(p) if *p == probs => {}
                    Some(_) => return Err(line_err(line, "all uncertain resources must share scenario probabilities")),
                }
                buyers.push(UncertainResource {
                    id: key.to_string(),
                    cost: head[0],
                    vc_up: head[1],
                    vc_down: head[2],
                    triggers,
                });
            }
            Section::Fleets => fleets.push(Fleet { name: key.to_string(), ramps: numbers(line, value)? }),
            Section::Config => set_config(&mut config, key, value).map_err(|msg| line_err(line, msg))?,
        }
    }
    if fleets.iter().enumerate().any(|(i, f)| fleets[..i].iter().any(|g| g.name == f.name)) {
        return Err(line_err(0, "duplicate fleet name"));
    }
    Ok(System {
        generators,
        buyers,
        scenarios: ScenarioSet { probabilities: probabilities.unwrap_or_else(|| vec![0.5, 0.5]) },
        fleets,
        config,
    })
}

fn parse_steps(value: &str) -> Result<Vec<DemandStep>, String> {
    if value == "auto" {
        return Ok(Vec::new());
    }
    value
        .split_whitespace()
        .map(|tok| {
            let (size, wtp) = tok.split_once('@').ok_or_else(|| format!("step {tok:?} is not size@wtp"))?;
            let size: f64 = size.parse().map_err(|_| format!("bad step size {size:?}"))?;
            let wtp: f64 = wtp.parse().map_err(|_| format!("bad step price {wtp:?}"))?;
            Ok(DemandStep { size, wtp })
        })
        .collect()
}

fn parse_f64(value: &str) -> Result<f64, String> {
    let v: f64 = value.parse().map_err(|_| format!("not a number: {value:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number: {value:?}"))
    }
}

fn set_config(c: &mut MarketConfig, key: &str, value: &str) -> Result<(), String> {
    let opt = |v: &str| -> Result<Option<f64>, String> { if v == "auto" { Ok(None) } else { parse_f64(v).map(Some) } };
    match key {
        "demand" => c.demand = parse_f64(value)?,
        "d1" => c.d1 = parse_f64(value)?,
        "d2" => c.d2 = parse_f64(value)?,
        "m" => c.m = parse_f64(value)?,
        "ir_resreq_up" => c.ir.resreq_up = opt(value)?,
        "ir_resreq_down" => c.ir.resreq_down = opt(value)?,
        "ir_steps_up" => c.ir.steps_up = parse_steps(value)?,
        "ir_steps_down" => c.ir.steps_down = parse_steps(value)?,
        "ir_default_wtp" => c.ir.default_wtp = parse_f64(value)?,
        "ir_vbc" => c.ir.vbc = parse_f64(value)?,
        "ir_price_tol" => c.ir.price_tol = parse_f64(value)?,
        "ir_max_iter" => c.ir.max_iter = value.parse().map_err(|_| format!("not an integer: {value:?}"))?,
        other => return Err(format!("unknown config key {other:?}")),
    }
    Ok(())
}

/// Applies a `key=value` override. Besides config keys, accepts
/// `strike_up.<gen>`, `strike_down.<gen>`, `cost.<gen>`, `ramp.<gen>`,
/// `vc_up.<buyer>` and `vc_down.<buyer>`.
pub fn apply_override(system: &mut System, assignment: &str) -> Result<(), ParseError> {
    let bad = |msg: String| ParseError::Override(assignment.to_string(), msg);
    let (key, value) = assignment.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
    let (key, value) = (key.trim(), value.trim());
    if let Some((field, id)) = key.split_once('.') {
        let v = parse_f64(value).map_err(bad)?;
        if let Some(g) = system.generators.iter_mut().find(|g| g.id == id) {
            match field {
                "strike_up" => g.strike_up = v,
                "strike_down" => g.strike_down = v,
                "cost" => g.cost = v,
                "ramp" => g.ramp = v,
                "capacity" => g.capacity = v,
                "pmin" => g.pmin = v,
                _ => return Err(bad(format!("unknown generator field {field:?}"))),
            }
            return Ok(());
        }
        if let Some(b) = system.buyers.iter_mut().find(|b| b.id == id) {
            match field {
                "vc_up" => b.vc_up = v,
                "vc_down" => b.vc_down = v,
                "cost" => b.cost = v,
                _ => return Err(bad(format!("unknown uncertain-resource field {field:?}"))),
            }
            return Ok(());
        }
        return Err(bad(format!("no resource named {id:?}")));
    }
    set_config(&mut system.config, key, value).map_err(bad)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn steps(v: &[DemandStep]) -> String {
    if v.is_empty() {
        "auto".into()
    } else {
        v.iter().map(|s| format!("{}@{}", s.size, s.wtp)).collect::<Vec<_>>().join(" ")
    }
}

/// Writes a system in the format read by [`parse_system`].
pub fn serialize_system(system: &System) -> String {
    let mut out = String::new();
    out.push_str("[generators]\n# id = capacity cost pmin strike_up strike_down ramp\n");
    for g in &system.generators {
        let _ = writeln!(
            out,
            "{} = {}",
            g.id,
            join(&[g.capacity, g.cost, g.pmin, g.strike_up, g.strike_down, g.ramp])
        );
    }
    out.push_str("\n[uncertain]\n# id = cost vc_up vc_down | triggers | probabilities\n");
    for b in &system.buyers {
        let _ = writeln!(
            out,
            "{} = {} | {} | {}",
            b.id,
            join(&[b.cost, b.vc_up, b.vc_down]),
            join(&b.triggers),
            join(&system.scenarios.probabilities)
        );
    }
    out.push_str("\n[fleets]\n");
    for f in &system.fleets {
        let _ = writeln!(out, "{} = {}", f.name, join(&f.ramps));
    }
    let c = &system.config;
    let ir: &IrConfig = &c.ir;
    let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
    out.push_str("\n[config]\n");
    let _ = writeln!(out, "demand = {}", c.demand);
    let _ = writeln!(out, "d1 = {}", c.d1);
    let _ = writeln!(out, "d2 = {}", c.d2);
    let _ = writeln!(out, "m = {}", c.m);
    let _ = writeln!(out, "ir_resreq_up = {}", opt(ir.resreq_up));
    let _ = writeln!(out, "ir_resreq_down = {}", opt(ir.resreq_down));
    let _ = writeln!(out, "ir_steps_up = {}", steps(&ir.steps_up));
    let _ = writeln!(out, "ir_steps_down = {}", steps(&ir.steps_down));
    let _ = writeln!(out, "ir_default_wtp = {}", ir.default_wtp);
    let _ = writeln!(out, "ir_vbc = {}", ir.vbc);
    let _ = writeln!(out, "ir_price_tol = {}", ir.price_tol);
    let _ = writeln!(out, "ir_max_iter = {}", ir.max_iter);
    out
}

/// The bundled six-fleet test system.
pub fn reference_system() -> System {
    parse_system(REFERENCE_SYSTEM).expect("bundled system is valid")
}

pub fn reference_system_text() -> &'static str {
    REFERENCE_SYSTEM
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_system_shape() {
        let s = reference_system();
        assert_eq!(s.generators.len(), 5);
        assert_eq!(s.generators[2].cost, 50.0);
        assert_eq!(s.buyers[0].triggers, vec![131.0, 141.0, 155.0, 165.0, 172.0]);
        assert_eq!(s.fleets.len(), 6);
        assert_eq!(s.fleets[5].ramps, vec![20.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(validate_system(&s.with_fleet("fleet1").unwrap()).is_empty());
    }

    #[test]
    fn round_trip() {
        let s = reference_system();
        let again = parse_system(&serialize_system(&s)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn empty_uncertain_section_parses() {
        let text = "[generators]\nG = 10 20 0 20 20\n[uncertain]\n[config]\ndemand = 5\n";
        let s = parse_unchecked(text).unwrap();
        assert!(s.buyers.is_empty());
    }

    #[test]
    fn bad_probabilities_rejected() {
        let text = "[generators]\nG = 10 20 0 20 20\n[uncertain]\nRE = 0 1000 0 | 1 2 3 4 5 | 0.2 0.2 0.2 0.2 0.3\n";
        assert!(matches!(parse_system(text), Err(ParseError::Invalid(_))));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[generators]\nG = 10 twenty 0 20 20\n";
        assert_eq!(parse_system(text), Err(ParseError::Line { line: 2, msg: "not a number: \"twenty\"".into() }));
        let text = "[config]\nspeed = 3\n";
        assert!(matches!(parse_system(text), Err(ParseError::Line { line: 2, .. })));
    }

    #[test]
    fn overrides() {
        let mut s = reference_system();
        apply_override(&mut s, "m=0").unwrap();
        apply_override(&mut s, "strike_up.CT2=70").unwrap();
        apply_override(&mut s, "vc_up.RE=900").unwrap();
        assert_eq!(s.config.m, 0.0);
        assert_eq!(s.generators[1].strike_up, 70.0);
        assert_eq!(s.buyers[0].vc_up, 900.0);
        assert!(apply_override(&mut s, "strike_up.XX=1").is_err());
        assert!(apply_override(&mut s, "nonsense").is_err());
    }
}
