//! Sectioned `key = value` config files.
//!
//! ```text
//! # comment
//! [experiment]
//! preset = drift
//! seeds = 1, 2, 3
//!
//! [task]
//! length = 300
//! frequencies = 0.4, 0.3, 0.2, 0.1
//! ```
//!
//! Every key is optional: values start from the named preset and each key
//! overrides one field. `[task]` may repeat; if any appears, the tasks
//! listed replace the preset's. `[appearance]` keys are class indices with
//! `r, g, b, std` values. [`ExperimentConfig::to_text`] writes the fully
//! resolved form, which parses back to an equal config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::{EdgeChoice, ExperimentConfig, HeuristicThreshold, LatencySource, Preset};
use crate::error::{Error, Result};
use crate::simenv::{ClassAppearance, TaskSpec};

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

struct Section<'a> {
    line: usize,
    name: &'a str,
    entries: Vec<Entry<'a>>,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Option<&Entry<'a>> {
        self.entries.iter().find(|e| e.key == key)
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn split_sections(text: &str) -> Result<Vec<Section<'_>>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        if let Some(inner) = s.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim();
            sections.push(Section {
                line,
                name,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key = value, found {s:?}")))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| err(line, "key outside of any section"))?;
        let key = key.trim();
        if section.get(key).is_some() {
            return Err(err(line, format!("duplicate key {key:?}")));
        }
        section.entries.push(Entry {
            line,
            key,
            value: value.trim(),
        });
    }
    Ok(sections)
}

fn scalar<T: FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| err(e.line, format!("bad value {:?} for {}", e.value, e.key)))
}

fn list<T: FromStr>(e: &Entry) -> Result<Vec<T>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|v| {
            v.trim().parse().map_err(|_| {
                err(
                    e.line,
                    format!("bad list item {:?} for {}", v.trim(), e.key),
                )
            })
        })
        .collect()
}

fn fixed<const N: usize>(e: &Entry) -> Result<[f64; N]> {
    let v: Vec<f64> = list(e)?;
    v.try_into()
        .map_err(|_| err(e.line, format!("{} needs {N} values", e.key)))
}

fn pair<T: FromStr + Copy>(e: &Entry) -> Result<(T, T)> {
    match list::<T>(e)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(err(e.line, format!("{} needs 2 values", e.key))),
    }
}

fn unknown(e: &Entry, section: &str) -> Error {
    err(e.line, format!("unknown key {:?} in [{section}]", e.key))
}

/// Parses a config file, starting from the preset it names (`drift` by
/// default), and validates the result.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let sections = split_sections(text)?;
    let preset = match sections
        .iter()
        .filter(|s| s.name == "experiment")
        .find_map(|s| s.get("preset"))
    {
        Some(e) => scalar::<Preset>(e)?,
        None => Preset::Drift,
    };
    let mut cfg = preset.config();
    let mut tasks: Vec<TaskSpec> = Vec::new();

    for section in &sections {
        match section.name {
            "experiment" => apply_experiment(&mut cfg, section)?,
            "stream" => apply_stream(&mut cfg, section)?,
            "appearance" => apply_appearance(&mut cfg, section)?,
            "task" => tasks.push(parse_task(section)?),
            "edge" => apply_edge(&mut cfg, section)?,
            "cloud" => {
                for e in &section.entries {
                    match e.key {
                        "perturbation" => cfg.cloud_perturbation = scalar(e)?,
                        _ => return Err(unknown(e, "cloud")),
                    }
                }
            }
            "gate" => apply_gate(&mut cfg, section)?,
            "train" => {
                for e in &section.entries {
                    let t = &mut cfg.train;
                    match e.key {
                        "learning_rate" => t.learning_rate = scalar(e)?,
                        "beta" => t.beta = scalar(e)?,
                        "epochs" => t.epochs = scalar(e)?,
                        "log_clamp" => t.log_clamp = scalar(e)?,
                        _ => return Err(unknown(e, "train")),
                    }
                }
            }
            "orchestrator" => {
                for e in &section.entries {
                    match e.key {
                        "maxsize" => cfg.maxsize = scalar(e)?,
                        "maxtime" => cfg.maxtime = scalar(e)?,
                        _ => return Err(unknown(e, "orchestrator")),
                    }
                }
            }
            "latency" => apply_latency(&mut cfg, section)?,
            other => return Err(err(section.line, format!("unknown section [{other}]"))),
        }
    }
    if !tasks.is_empty() {
        cfg.stream.tasks = tasks;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_experiment(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    for e in &s.entries {
        match e.key {
            "preset" => {}
            "name" => cfg.name = e.value.to_string(),
            "seeds" => cfg.seeds = list(e)?,
            "strategies" => cfg.strategies = list(e)?,
            "sweep_deltas" => cfg.sweep_deltas = list(e)?,
            "heldout_samples" => cfg.heldout_samples = scalar(e)?,
            "output" => cfg.output = PathBuf::from(e.value),
            _ => return Err(unknown(e, "experiment")),
        }
    }
    Ok(())
}

fn apply_stream(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    for e in &s.entries {
        let st = &mut cfg.stream;
        match e.key {
            "classes" => st.class_count = scalar(e)?,
            "height" => st.height = scalar(e)?,
            "width" => st.width = scalar(e)?,
            "regions" => st.regions = pair(e)?,
            "region_scale" => st.region_scale = scalar(e)?,
            "noise_scale" => st.noise_scale = pair(e)?,
            _ => return Err(unknown(e, "stream")),
        }
    }
    Ok(())
}

fn apply_appearance(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    let mut looks = Vec::new();
    for e in &s.entries {
        let class: usize = e
            .key
            .parse()
            .map_err(|_| err(e.line, format!("appearance key {:?} is not a class", e.key)))?;
        if class != looks.len() {
            return Err(err(
                e.line,
                "appearance classes must be listed 0, 1, 2, ...".to_string(),
            ));
        }
        let [r, g, b, std] = fixed::<4>(e)?;
        looks.push(ClassAppearance {
            mean: [r, g, b],
            std,
        });
    }
    cfg.stream.appearance = looks;
    Ok(())
}

fn parse_task(s: &Section) -> Result<TaskSpec> {
    let mut length = None;
    let mut frequencies = None;
    let mut illumination = [0.0; 3];
    for e in &s.entries {
        match e.key {
            "length" => length = Some(scalar(e)?),
            "frequencies" => frequencies = Some(list(e)?),
            "illumination" => illumination = fixed::<3>(e)?,
            _ => return Err(unknown(e, "task")),
        }
    }
    Ok(TaskSpec {
        length: length.ok_or_else(|| err(s.line, "[task] needs length"))?,
        frequencies: frequencies.ok_or_else(|| err(s.line, "[task] needs frequencies"))?,
        illumination,
    })
}

fn apply_edge(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    if let Some(e) = s.get("kind") {
        cfg.edge = match e.value {
            "trainable" => match cfg.edge {
                t @ EdgeChoice::Trainable { .. } => t,
                EdgeChoice::Oracle { .. } => Preset::Drift.trainable_edge(),
            },
            "oracle" => match cfg.edge {
                o @ EdgeChoice::Oracle { .. } => o,
                EdgeChoice::Trainable { .. } => EdgeChoice::Oracle {
                    correctness: 0.9,
                    temperature: 1.0,
                },
            },
            other => return Err(err(e.line, format!("unknown edge kind {other:?}"))),
        };
    }
    for e in &s.entries {
        match (&mut cfg.edge, e.key) {
            (_, "kind") => {}
            (
                EdgeChoice::Trainable {
                    pretrain_samples, ..
                },
                "pretrain_samples",
            ) => *pretrain_samples = scalar(e)?,
            (
                EdgeChoice::Trainable {
                    pretrain_epochs, ..
                },
                "pretrain_epochs",
            ) => *pretrain_epochs = scalar(e)?,
            (
                EdgeChoice::Trainable {
                    pretrain_learning_rate,
                    ..
                },
                "pretrain_learning_rate",
            ) => *pretrain_learning_rate = scalar(e)?,
            (EdgeChoice::Oracle { correctness, .. }, "correctness") => *correctness = scalar(e)?,
            (EdgeChoice::Oracle { temperature, .. }, "temperature") => *temperature = scalar(e)?,
            _ => return Err(unknown(e, "edge")),
        }
    }
    Ok(())
}

fn apply_gate(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    for e in &s.entries {
        let g = &mut cfg.gate;
        match e.key {
            "delta" => g.threshold = scalar(e)?,
            "hidden_dim" => g.hidden_dim = scalar(e)?,
            "mess_pixel_threshold" => g.mess_pixel_threshold = scalar(e)?,
            "heuristic_delta" => {
                g.heuristic_threshold = match e.value {
                    "matched" => HeuristicThreshold::Matched,
                    _ => HeuristicThreshold::Fixed(scalar(e)?),
                }
            }
            "calibration_samples" => g.calibration_samples = scalar(e)?,
            "pretrain_epochs" => g.pretrain_epochs = scalar(e)?,
            "pretrain_learning_rate" => g.pretrain_learning_rate = scalar(e)?,
            _ => return Err(unknown(e, "gate")),
        }
    }
    Ok(())
}

fn apply_latency(cfg: &mut ExperimentConfig, s: &Section) -> Result<()> {
    let lat = &mut cfg.latency;
    match (s.get("preset"), s.get("d1"), s.get("d0")) {
        (Some(p), None, None) => lat.source = LatencySource::Preset(scalar(p)?),
        (None, Some(d1), Some(d0)) => {
            lat.source = LatencySource::Explicit {
                d1: scalar(d1)?,
                d0: scalar(d0)?,
            }
        }
        (None, None, None) => {}
        _ => {
            return Err(err(
                s.line,
                "[latency] takes either preset or both d1 and d0",
            ))
        }
    }
    for e in &s.entries {
        match e.key {
            "preset" | "d1" | "d0" => {}
            "bandwidth" => lat.bandwidth_bytes_per_s = scalar(e)?,
            "edge_fraction_form" => lat.edge_fraction_form = scalar(e)?,
            "delay_max" => {
                lat.delay_max = match e.value {
                    "none" => None,
                    _ => Some(scalar(e)?),
                }
            }
            _ => return Err(unknown(e, "latency")),
        }
    }
    Ok(())
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    /// Fully resolved config text; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let st = &self.stream;
        let _ = writeln!(o, "[experiment]");
        let _ = writeln!(o, "preset = {}", Preset::Drift.name());
        let _ = writeln!(o, "name = {}", self.name);
        let _ = writeln!(o, "seeds = {}", join(&self.seeds));
        let _ = writeln!(o, "strategies = {}", join(&self.strategies));
        let _ = writeln!(o, "sweep_deltas = {}", join(&self.sweep_deltas));
        let _ = writeln!(o, "heldout_samples = {}", self.heldout_samples);
        let _ = writeln!(o, "output = {}", self.output.display());

        let _ = writeln!(o, "\n[stream]");
        let _ = writeln!(o, "classes = {}", st.class_count);
        let _ = writeln!(o, "height = {}", st.height);
        let _ = writeln!(o, "width = {}", st.width);
        let _ = writeln!(o, "regions = {}, {}", st.regions.0, st.regions.1);
        let _ = writeln!(o, "region_scale = {}", st.region_scale);
        let _ = writeln!(
            o,
            "noise_scale = {}, {}",
            st.noise_scale.0, st.noise_scale.1
        );

        let _ = writeln!(o, "\n[appearance]");
        for (c, a) in st.appearance.iter().enumerate() {
            let _ = writeln!(o, "{c} = {}, {}", join(a.mean), a.std);
        }
        for t in &st.tasks {
            let _ = writeln!(o, "\n[task]");
            let _ = writeln!(o, "length = {}", t.length);
            let _ = writeln!(o, "frequencies = {}", join(&t.frequencies));
            let _ = writeln!(o, "illumination = {}", join(t.illumination));
        }

        let _ = writeln!(o, "\n[edge]");
        match self.edge {
            EdgeChoice::Trainable {
                pretrain_samples,
                pretrain_epochs,
                pretrain_learning_rate,
            } => {
                let _ = writeln!(o, "kind = trainable");
                let _ = writeln!(o, "pretrain_samples = {pretrain_samples}");
                let _ = writeln!(o, "pretrain_epochs = {pretrain_epochs}");
                let _ = writeln!(o, "pretrain_learning_rate = {pretrain_learning_rate}");
            }
            EdgeChoice::Oracle {
                correctness,
                temperature,
            } => {
                let _ = writeln!(o, "kind = oracle");
                let _ = writeln!(o, "correctness = {correctness}");
                let _ = writeln!(o, "temperature = {temperature}");
            }
        }

        let _ = writeln!(o, "\n[cloud]");
        let _ = writeln!(o, "perturbation = {}", self.cloud_perturbation);

        let g = &self.gate;
        let _ = writeln!(o, "\n[gate]");
        let _ = writeln!(o, "delta = {}", g.threshold);
        let _ = writeln!(o, "hidden_dim = {}", g.hidden_dim);
        let _ = writeln!(o, "mess_pixel_threshold = {}", g.mess_pixel_threshold);
        match g.heuristic_threshold {
            HeuristicThreshold::Matched => {
                let _ = writeln!(o, "heuristic_delta = matched");
            }
            HeuristicThreshold::Fixed(d) => {
                let _ = writeln!(o, "heuristic_delta = {d}");
            }
        }
        let _ = writeln!(o, "calibration_samples = {}", g.calibration_samples);
        let _ = writeln!(o, "pretrain_epochs = {}", g.pretrain_epochs);
        let _ = writeln!(o, "pretrain_learning_rate = {}", g.pretrain_learning_rate);

        let t = &self.train;
        let _ = writeln!(o, "\n[train]");
        let _ = writeln!(o, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(o, "beta = {}", t.beta);
        let _ = writeln!(o, "epochs = {}", t.epochs);
        let _ = writeln!(o, "log_clamp = {}", t.log_clamp);

        let _ = writeln!(o, "\n[orchestrator]");
        let _ = writeln!(o, "maxsize = {}", self.maxsize);
        let _ = writeln!(o, "maxtime = {}", self.maxtime);

        let l = &self.latency;
        let _ = writeln!(o, "\n[latency]");
        match l.source {
            LatencySource::Preset(p) => {
                let _ = writeln!(o, "preset = {p}");
            }
            LatencySource::Explicit { d1, d0 } => {
                let _ = writeln!(o, "d1 = {d1}");
                let _ = writeln!(o, "d0 = {d0}");
            }
        }
        let _ = writeln!(o, "bandwidth = {}", l.bandwidth_bytes_per_s);
        let _ = writeln!(o, "edge_fraction_form = {}", l.edge_fraction_form.name());
        match l.delay_max {
            Some(d) => {
                let _ = writeln!(o, "delay_max = {d}");
            }
            None => {
                let _ = writeln!(o, "delay_max = none");
            }
        }
        o
    }
}
