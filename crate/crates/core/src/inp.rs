//! Reader and writer for the subset of the EPANET INP format this crate models.
//!
//! Recognized sections: `[TITLE] [JUNCTIONS] [RESERVOIRS] [PIPES] [DEMANDS]
//! [PATTERNS] [COORDINATES] [TIMES] [OPTIONS]`. Sections describing hydraulic
//! elements the solver does not model (pumps, valves, tanks, ...) are rejected
//! when they hold any record. Anything else is kept in the [`InpDocument`] but
//! has no effect on the model.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{HydraulicModel, ModelBuilder, ModelError, PipeStatus, TimeConfig};

#[derive(Debug, Error, PartialEq)]
pub enum InpError {
    #[error("line {line}: invalid number {token:?} for {field}")]
    BadNumber {
        line: usize,
        field: &'static str,
        token: String,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unsupported feature: {feature}")]
    Unsupported { line: usize, feature: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One `[TAG]` block: the header line plus the raw lines under it.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// Upper-cased tag without brackets.
    pub tag: String,
    pub header: String,
    /// Raw lines with their 1-based line numbers.
    pub lines: Vec<(usize, String)>,
}

impl Section {
    /// Non-empty records: tokens with `;` comments stripped.
    pub fn records(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.lines.iter().filter_map(|(n, l)| {
            let data = l.split(';').next().unwrap_or("");
            let tokens: Vec<&str> = data.split_whitespace().collect();
            (!tokens.is_empty()).then_some((*n, tokens))
        })
    }
}

/// Line-preserving view of an INP file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InpDocument {
    /// Lines before the first section header.
    pub preamble: Vec<String>,
    pub sections: Vec<Section>,
}

impl InpDocument {
    pub fn parse(text: &str) -> InpDocument {
        let mut doc = InpDocument::default();
        for (i, raw) in text.lines().enumerate() {
            let trimmed = raw.trim();
            if let Some(rest) = trimmed.strip_prefix('[') {
                if let Some(end) = rest.find(']') {
                    doc.sections.push(Section {
                        tag: rest[..end].trim().to_ascii_uppercase(),
                        header: raw.to_string(),
                        lines: Vec::new(),
                    });
                    continue;
                }
            }
            match doc.sections.last_mut() {
                Some(s) => s.lines.push((i + 1, raw.to_string())),
                None => doc.preamble.push(raw.to_string()),
            }
        }
        doc
    }

    pub fn section(&self, tag: &str) -> impl Iterator<Item = &Section> {
        let tag = tag.to_ascii_uppercase();
        self.sections.iter().filter(move |s| s.tag == tag)
    }

    /// The document text, line for line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.preamble {
            out.push_str(l);
            out.push('\n');
        }
        for s in &self.sections {
            out.push_str(&s.header);
            out.push('\n');
            for (_, l) in &s.lines {
                out.push_str(l);
                out.push('\n');
            }
        }
        out
    }
}

const UNSUPPORTED_SECTIONS: &[(&str, &str)] = &[
    ("PUMPS", "pumps"),
    ("VALVES", "valves"),
    ("TANKS", "tanks"),
    ("EMITTERS", "emitters"),
    ("STATUS", "initial link status overrides"),
    ("CONTROLS", "simple controls"),
    ("RULES", "rule-based controls"),
];

fn number(line: usize, field: &'static str, token: &str) -> Result<f64, InpError> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(InpError::BadNumber {
            line,
            field,
            token: token.to_string(),
        }),
    }
}

fn syntax(line: usize, message: impl Into<String>) -> InpError {
    InpError::Syntax {
        line,
        message: message.into(),
    }
}

/// Parses a duration such as `24`, `24:00`, `1:30:00`, `3600 SEC` or `2 days` into seconds.
fn duration_seconds(line: usize, tokens: &[&str]) -> Result<u64, InpError> {
    let bad = || InpError::BadNumber {
        line,
        field: "time",
        token: tokens.join(" "),
    };
    let value = *tokens.first().ok_or_else(bad)?;
    let seconds = if value.contains(':') {
        let parts: Vec<&str> = value.split(':').collect();
        if parts.len() > 3 {
            return Err(bad());
        }
        let mut total = 0.0;
        let scale = [3600.0, 60.0, 1.0];
        for (p, s) in parts.iter().zip(scale) {
            total += p.parse::<f64>().map_err(|_| bad())? * s;
        }
        total
    } else {
        let v: f64 = value.parse().map_err(|_| bad())?;
        let unit = tokens.get(1).map(|u| u.to_ascii_uppercase());
        let scale = match unit.as_deref() {
            None => 3600.0,
            Some(u) if u.starts_with("SEC") => 1.0,
            Some(u) if u.starts_with("MIN") => 60.0,
            Some(u) if u.starts_with("HOUR") => 3600.0,
            Some(u) if u.starts_with("DAY") => 86400.0,
            Some(_) => return Err(bad()),
        };
        v * scale
    };
    if !(seconds.is_finite() && seconds >= 0.0) {
        return Err(bad());
    }
    Ok(seconds.round() as u64)
}

/// Flow-unit factor to m³/h. Only metric units are accepted since lengths
/// and diameters are read as m and mm.
fn flow_factor(line: usize, unit: &str) -> Result<f64, InpError> {
    match unit.to_ascii_uppercase().as_str() {
        "CMH" => Ok(1.0),
        "LPS" => Ok(3.6),
        "LPM" => Ok(0.06),
        "MLD" => Ok(1000.0 / 24.0),
        "CMD" => Ok(1.0 / 24.0),
        other => Err(InpError::Unsupported {
            line,
            feature: format!("flow units {other} (US customary units are not supported)"),
        }),
    }
}

/// Builds a validated model from INP text.
pub fn parse_inp(text: &str) -> Result<HydraulicModel, InpError> {
    let doc = InpDocument::parse(text);
    model_from_document(&doc)
}

pub fn model_from_document(doc: &InpDocument) -> Result<HydraulicModel, InpError> {
    for (tag, feature) in UNSUPPORTED_SECTIONS {
        for s in doc.section(tag) {
            if let Some((line, _)) = s.records().next() {
                return Err(InpError::Unsupported {
                    line,
                    feature: feature.to_string(),
                });
            }
        }
    }

    // Options first: flow units affect how demands are read.
    let mut flow_scale = 1.0;
    for s in doc.section("OPTIONS") {
        for (line, t) in s.records() {
            let key = t[0].to_ascii_uppercase();
            match key.as_str() {
                "UNITS" => {
                    let u = t.get(1).ok_or_else(|| syntax(line, "Units needs a value"))?;
                    flow_scale = flow_factor(line, u)?;
                }
                "HEADLOSS" => {
                    let h = t.get(1).ok_or_else(|| syntax(line, "Headloss needs a value"))?;
                    if !h.eq_ignore_ascii_case("H-W") {
                        return Err(InpError::Unsupported {
                            line,
                            feature: format!("headloss formula {h} (only H-W is supported)"),
                        });
                    }
                }
                "DEMAND" if t.get(1).is_some_and(|w| w.eq_ignore_ascii_case("MODEL")) => {
                    if let Some(m) = t.get(2) {
                        if !m.eq_ignore_ascii_case("DDA") {
                            return Err(InpError::Unsupported {
                                line,
                                feature: format!("demand model {m} (only DDA is supported)"),
                            });
                        }
                    }
                }
                _ => {}
            }
        }
    }

    let mut b = ModelBuilder::new();
    for s in doc.section("TITLE") {
        for (_, l) in &s.lines {
            let l = l.trim();
            if !l.is_empty() {
                b.title_line(l);
            }
        }
    }

    for s in doc.section("JUNCTIONS") {
        for (line, t) in s.records() {
            if t.len() < 2 {
                return Err(syntax(line, "junction needs an id and an elevation"));
            }
            let elevation = number(line, "elevation", t[1])?;
            let demand = match t.get(2) {
                Some(v) => number(line, "base demand", v)? * flow_scale,
                None => 0.0,
            };
            b.junction(t[0], elevation, demand, t.get(3).copied());
        }
    }

    for s in doc.section("RESERVOIRS") {
        for (line, t) in s.records() {
            if t.len() < 2 {
                return Err(syntax(line, "reservoir needs an id and a head"));
            }
            let head = number(line, "head", t[1])?;
            b.reservoir(t[0], head, t.get(2).copied());
        }
    }

    for s in doc.section("PIPES") {
        for (line, t) in s.records() {
            if t.len() < 6 {
                return Err(syntax(
                    line,
                    "pipe needs id, two nodes, length, diameter and roughness",
                ));
            }
            let length = number(line, "length", t[3])?;
            let diameter = number(line, "diameter", t[4])?;
            let roughness = number(line, "roughness", t[5])?;
            if let Some(m) = t.get(6) {
                if number(line, "minor loss", m)? != 0.0 {
                    return Err(InpError::Unsupported {
                        line,
                        feature: format!("minor loss on pipe {}", t[0]),
                    });
                }
            }
            let status = match t.get(7).map(|s| s.to_ascii_uppercase()) {
                None => PipeStatus::Open,
                Some(s) if s == "OPEN" => PipeStatus::Open,
                Some(s) if s == "CLOSED" => PipeStatus::Closed,
                Some(s) if s == "CV" => {
                    return Err(InpError::Unsupported {
                        line,
                        feature: format!("check valve on pipe {}", t[0]),
                    })
                }
                Some(s) => return Err(syntax(line, format!("unknown pipe status {s}"))),
            };
            b.pipe(t[0], t[1], t[2], length, diameter, roughness, status);
        }
    }

    for s in doc.section("DEMANDS") {
        for (line, t) in s.records() {
            if t.len() < 2 {
                return Err(syntax(line, "demand needs a junction and a value"));
            }
            let base = number(line, "demand", t[1])? * flow_scale;
            if !b.demand_category(t[0], base, t.get(2).copied()) {
                return Err(syntax(line, format!("demand for undefined junction {:?}", t[0])));
            }
        }
    }

    for s in doc.section("PATTERNS") {
        for (line, t) in s.records() {
            let values = t[1..]
                .iter()
                .map(|v| number(line, "pattern multiplier", v))
                .collect::<Result<Vec<_>, _>>()?;
            b.pattern(t[0], &values);
        }
    }

    for s in doc.section("COORDINATES") {
        for (line, t) in s.records() {
            if t.len() < 3 {
                return Err(syntax(line, "coordinates need a node, x and y"));
            }
            let x = number(line, "x coordinate", t[1])?;
            let y = number(line, "y coordinate", t[2])?;
            b.coordinates(t[0], x, y);
        }
    }

    let mut duration = None;
    let mut step = None;
    for s in doc.section("TIMES") {
        for (line, t) in s.records() {
            let key = t[0].to_ascii_uppercase();
            if key == "DURATION" {
                duration = Some(duration_seconds(line, &t[1..])?);
            } else if key == "HYDRAULIC" && t.get(1).is_some_and(|w| w.eq_ignore_ascii_case("TIMESTEP")) {
                let secs = duration_seconds(line, &t[2..])?;
                if secs == 0 {
                    return Err(syntax(line, "hydraulic timestep must be positive"));
                }
                step = Some(secs);
            }
        }
    }
    let defaults = TimeConfig::default();
    let step_seconds = step.unwrap_or(defaults.step_seconds);
    let steps = match duration {
        None => defaults.steps,
        Some(0) => 1,
        Some(d) => d.div_ceil(step_seconds) as usize,
    };
    b.times(TimeConfig {
        steps,
        step_seconds,
    });

    Ok(b.build()?)
}

fn hms(seconds: u64) -> String {
    format!("{}:{:02}:{:02}", seconds / 3600, (seconds / 60) % 60, seconds % 60)
}

/// Serializes a model. Numbers use the shortest text that parses back to the same value.
pub fn write_inp(model: &HydraulicModel) -> String {
    let mut out = String::new();
    // Writing to a String cannot fail.
    let w = &mut out;

    w.push_str("[TITLE]\n");
    for l in model.title() {
        let _ = writeln!(w, "{l}");
    }

    w.push_str("\n[JUNCTIONS]\n;ID\tElev\tDemand\tPattern\n");
    for j in model.junctions() {
        let _ = write!(w, "{}\t{}\t{}", j.label, j.elevation, j.base_demand);
        if let Some(p) = &j.demand_pattern {
            let _ = write!(w, "\t{p}");
        }
        w.push('\n');
    }

    w.push_str("\n[RESERVOIRS]\n;ID\tHead\tPattern\n");
    for r in model.reservoirs() {
        let _ = write!(w, "{}\t{}", r.label, r.head);
        if let Some(p) = &r.head_pattern {
            let _ = write!(w, "\t{p}");
        }
        w.push('\n');
    }

    w.push_str("\n[PIPES]\n;ID\tNode1\tNode2\tLength\tDiameter\tRoughness\tMinorLoss\tStatus\n");
    for p in model.pipes() {
        let status = match p.status {
            PipeStatus::Open => "Open",
            PipeStatus::Closed => "Closed",
        };
        let _ = writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t0\t{}",
            p.label,
            model.label(p.from),
            model.label(p.to),
            p.length,
            p.diameter,
            p.roughness,
            status
        );
    }

    w.push_str("\n[DEMANDS]\n;Junction\tDemand\tPattern\n");
    for j in model.junctions() {
        for c in &j.demand_categories {
            let _ = write!(w, "{}\t{}", j.label, c.base);
            if let Some(p) = &c.pattern {
                let _ = write!(w, "\t{p}");
            }
            w.push('\n');
        }
    }

    w.push_str("\n[PATTERNS]\n;ID\tMultipliers\n");
    for p in model.patterns() {
        if p.multipliers.is_empty() {
            let _ = writeln!(w, "{}", p.label);
        }
        for chunk in p.multipliers.chunks(12) {
            let _ = write!(w, "{}", p.label);
            for m in chunk {
                let _ = write!(w, "\t{m}");
            }
            w.push('\n');
        }
    }

    w.push_str("\n[COORDINATES]\n;Node\tX\tY\n");
    for id in model.node_ids() {
        if let Some((x, y)) = model.coordinates(id) {
            let _ = writeln!(w, "{}\t{}\t{}", model.label(id), x, y);
        }
    }

    let times = model.times();
    w.push_str("\n[TIMES]\n");
    let _ = writeln!(w, "Duration\t{}", hms(times.steps as u64 * times.step_seconds));
    let _ = writeln!(w, "Hydraulic Timestep\t{}", hms(times.step_seconds));

    w.push_str("\n[OPTIONS]\nUnits\tCMH\nHeadloss\tH-W\n\n[END]\n");
    out
}
