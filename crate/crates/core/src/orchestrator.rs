//! The collaborative inference loop.
//!
//! Each sample is scored on the edge. Confident samples emit the edge
//! prediction; the rest are uploaded over the wire protocol, segmented by
//! the cloud model, fused with the edge prediction, and stored with the
//! fused result as a pseudo-label. When the replay buffer grows past
//! `maxsize` or more than `maxtime` samples pass without a training round,
//! the edge model and then the gate are retrained on the buffer and the new
//! weights are pushed to the edge in a `MODEL_UPDATE` frame.

use std::sync::Arc;

use crate::adapt::{gate_batch, update_f, update_h, FitReport, ReplayBuffer, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::assisted_inference;
use crate::gating::{Decision, Gate, GatePolicy};
use crate::metrics::{mean_iou, RunReport, TraceRecord};
use crate::models::{CloudMaskModel, EdgeModel};
use crate::simenv::{sample_latency, LatencyModel, Sample};
use crate::tensor::{argmax_labels, Image, SemanticMask};
use crate::wire::{
    decode, encode, ModelUpdate, WireError, WireMessage, KIND_MASK_RESULT, KIND_UPLOAD_IMAGE,
};

pub const DEFAULT_MAXSIZE: usize = 32;
pub const DEFAULT_MAXTIME: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct OrchestratorConfig {
    /// Train once the buffer holds more than this many samples.
    pub maxsize: usize,
    /// Train once more than this many samples pass without a round.
    pub maxtime: usize,
    pub policy: GatePolicy,
    pub train: TrainConfig,
    pub latency: LatencyModel,
    pub adaptive_updates: bool,
}

impl OrchestratorConfig {
    pub fn new(policy: GatePolicy, latency: LatencyModel) -> Self {
        Self {
            maxsize: DEFAULT_MAXSIZE,
            maxtime: DEFAULT_MAXTIME,
            policy,
            train: TrainConfig::default(),
            latency,
            adaptive_updates: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.maxsize == 0 || self.maxtime == 0 {
            return Err(Error::InvalidValue(
                "maxsize and maxtime must be at least 1".into(),
            ));
        }
        self.policy.validate()?;
        self.train.validate()?;
        self.latency.validate()
    }
}

/// Serves `UPLOAD_IMAGE` requests with `MASK_RESULT` responses.
pub struct CloudService {
    model: Arc<dyn CloudMaskModel>,
    served: usize,
}

impl CloudService {
    pub fn new(model: Arc<dyn CloudMaskModel>) -> Self {
        Self { model, served: 0 }
    }

    /// Requests answered successfully so far.
    pub fn served(&self) -> usize {
        self.served
    }

    /// Handles one request frame. `truth` feeds oracle cloud models only.
    pub fn handle(&mut self, request: &[u8], truth: Option<&SemanticMask>) -> Result<Vec<u8>> {
        let img = match decode(request)? {
            WireMessage::UploadImage(img) => img,
            other => {
                return Err(WireError::UnexpectedKind {
                    expected: KIND_UPLOAD_IMAGE,
                    got: other.kind(),
                }
                .into())
            }
        };
        let masks = self.model.infer(&img, truth)?;
        let response = encode(&WireMessage::MaskResult(masks))?;
        self.served += 1;
        Ok(response)
    }
}

/// Request/response channel from the edge to the cloud.
pub trait CloudLink: Send {
    /// Delivers `request` and returns the response frame. `truth` is
    /// simulation metadata for oracle cloud models; it is not part of the
    /// frame.
    fn exchange(&mut self, request: &[u8], truth: Option<&SemanticMask>) -> Result<Vec<u8>>;
}

/// Byte-exact in-process transport.
pub struct InProcessLink {
    pub service: CloudService,
}

impl CloudLink for InProcessLink {
    fn exchange(&mut self, request: &[u8], truth: Option<&SemanticMask>) -> Result<Vec<u8>> {
        self.service.handle(request, truth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome {
    pub decision: Decision,
    pub confidence: f64,
    pub output: SemanticMask,
    pub latency_s: f64,
    /// mIoU of the edge-only output, when ground truth is known.
    pub iou_edge: Option<f64>,
    /// mIoU of the fused output, when ground truth is known. For edge
    /// decisions this is the counterfactual fusion, computed off the wire.
    pub iou_fused: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub buffer_len: usize,
    pub edge_fit: Option<FitReport>,
    pub gate_fit: FitReport,
}

pub struct Orchestrator {
    cfg: OrchestratorConfig,
    edge: Box<dyn EdgeModel>,
    gate: Gate,
    link: Box<dyn CloudLink>,
    diagnostics: Option<Arc<dyn CloudMaskModel>>,
    buffer: ReplayBuffer,
    since_update: usize,
    processed: usize,
    updates: usize,
}

impl Orchestrator {
    /// Wires an edge model and gate to `cloud` through an in-process link.
    /// The same cloud model scores counterfactual fusions for diagnostics.
    pub fn new(
        cfg: OrchestratorConfig,
        edge: Box<dyn EdgeModel>,
        gate: Gate,
        cloud: Arc<dyn CloudMaskModel>,
    ) -> Result<Self> {
        let link = InProcessLink {
            service: CloudService::new(cloud.clone()),
        };
        let mut orch = Self::with_link(cfg, edge, gate, Box::new(link))?;
        orch.diagnostics = Some(cloud);
        Ok(orch)
    }

    pub fn with_link(
        cfg: OrchestratorConfig,
        edge: Box<dyn EdgeModel>,
        gate: Gate,
        link: Box<dyn CloudLink>,
    ) -> Result<Self> {
        cfg.validate()?;
        let buffer = ReplayBuffer::new(cfg.maxsize + 1)?;
        Ok(Self {
            cfg,
            edge,
            gate,
            link,
            diagnostics: None,
            buffer,
            since_update: 0,
            processed: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.cfg
    }

    pub fn edge(&self) -> &dyn EdgeModel {
        self.edge.as_ref()
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Routes one sample and returns what the edge emitted.
    pub fn process_sample(
        &mut self,
        img: &Image,
        truth: Option<&SemanticMask>,
    ) -> Result<InferenceOutcome> {
        let pred = self.edge.infer(img, truth)?;
        let confidence = self.cfg.policy.confidence(&self.gate, &pred)?;
        let decision = self.cfg.policy.decide(confidence);
        let edge_labels = argmax_labels(&pred);

        let (output, fused) = match decision {
            Decision::Edge => (edge_labels.clone(), None),
            Decision::Cloud => {
                let request = encode(&WireMessage::UploadImage(img.clone()))?;
                let response = self.link.exchange(&request, truth)?;
                let masks = match decode(&response)? {
                    WireMessage::MaskResult(masks) => masks,
                    other => {
                        return Err(WireError::UnexpectedKind {
                            expected: KIND_MASK_RESULT,
                            got: other.kind(),
                        }
                        .into())
                    }
                };
                let fused = assisted_inference(&pred, &masks)?.semantic;
                (fused.clone(), Some(fused))
            }
        };

        let (iou_edge, iou_fused) = match truth {
            Some(truth) => {
                let iou_edge = mean_iou(&edge_labels, truth)?;
                let iou_fused = match (&fused, &self.diagnostics) {
                    (Some(f), _) => Some(mean_iou(f, truth)?),
                    (None, Some(cloud)) => {
                        let masks = cloud.infer(img, Some(truth))?;
                        Some(mean_iou(
                            &assisted_inference(&pred, &masks)?.semantic,
                            truth,
                        )?)
                    }
                    (None, None) => None,
                };
                (Some(iou_edge), iou_fused)
            }
            None => (None, None),
        };

        if let Some(fused) = fused {
            self.buffer.push(img.clone(), fused)?;
        }
        self.processed += 1;
        self.since_update += 1;
        Ok(InferenceOutcome {
            decision,
            confidence,
            output,
            latency_s: sample_latency(decision, &self.cfg.latency, img),
            iou_edge,
            iou_fused,
        })
    }

    /// Runs a training round if a trigger fires and the buffer is nonempty.
    pub fn maybe_update(&mut self) -> Result<Option<UpdateReport>> {
        if !self.cfg.adaptive_updates {
            return Ok(None);
        }
        let fire = self.buffer.len() > self.cfg.maxsize || self.since_update > self.cfg.maxtime;
        if !fire {
            return Ok(None);
        }
        self.since_update = 0;
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let batch = self.buffer.to_batch();
        let train = self.cfg.train;

        let mut gate = self.gate.clone();
        let (edge_fit, gate_fit) = match self.edge.as_trainable() {
            Some(current) => {
                let mut edge = current.clone();
                let edge_fit = update_f(&mut edge, &batch, &train)?;
                let pairs = gate_batch(&edge, &batch, train.log_clamp)?;
                let gate_fit = update_h(&mut gate, &pairs, &train)?;
                let frame = encode(&WireMessage::ModelUpdate(ModelUpdate {
                    edge,
                    gate: Some(gate),
                }))?;
                self.apply_update(&frame)?;
                (Some(edge_fit), gate_fit)
            }
            None => {
                let pairs = gate_batch(self.edge.as_ref(), &batch, train.log_clamp)?;
                let gate_fit = update_h(&mut gate, &pairs, &train)?;
                self.gate = gate;
                (None, gate_fit)
            }
        };
        self.buffer.clear();
        self.updates += 1;
        Ok(Some(UpdateReport {
            buffer_len: batch.len(),
            edge_fit,
            gate_fit,
        }))
    }

    /// Applies a `MODEL_UPDATE` frame. Nothing changes unless the whole frame
    /// decodes and matches the edge model's shape.
    pub fn apply_update(&mut self, frame: &[u8]) -> Result<()> {
        let update = match decode(frame)? {
            WireMessage::ModelUpdate(u) => u,
            other => {
                return Err(WireError::UnexpectedKind {
                    expected: crate::wire::KIND_MODEL_UPDATE,
                    got: other.kind(),
                }
                .into())
            }
        };
        let edge = self
            .edge
            .as_trainable_mut()
            .ok_or_else(|| Error::InvalidValue("edge model is not trainable".into()))?;
        if update.edge.class_count() != edge.class_count() {
            return Err(Error::DimensionMismatch(format!(
                "update has {} classes, edge model has {}",
                update.edge.class_count(),
                edge.class_count()
            )));
        }
        if let Some(g) = &update.gate {
            if g.hidden_dim() != self.gate.hidden_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "update gate has hidden_dim {}, edge gate has {}",
                    g.hidden_dim(),
                    self.gate.hidden_dim()
                )));
            }
        }
        *edge = update.edge;
        if let Some(g) = update.gate {
            self.gate = g;
        }
        Ok(())
    }

    /// Processes `stream` in order, interleaving training rounds.
    pub fn run(&mut self, stream: &[Sample]) -> Result<RunReport> {
        let mut trace = Vec::with_capacity(stream.len());
        let start_updates = self.updates;
        for (index, sample) in stream.iter().enumerate() {
            let wrap = |e: Error| Error::Sample {
                index,
                source: Box::new(e),
            };
            let outcome = self
                .process_sample(&sample.image, Some(&sample.truth))
                .map_err(wrap)?;
            trace.push(TraceRecord {
                sample: index,
                task: sample.task,
                decision: outcome.decision,
                confidence: outcome.confidence,
                iou_edge: outcome.iou_edge.unwrap_or_default(),
                iou_fused: outcome.iou_fused.unwrap_or_default(),
                latency_s: outcome.latency_s,
            });
            self.maybe_update().map_err(wrap)?;
        }
        RunReport::from_trace(trace, self.updates - start_updates)
    }
}

/// Builds an orchestrator and runs it over `stream`.
pub fn run_stream(
    cfg: OrchestratorConfig,
    edge: Box<dyn EdgeModel>,
    gate: Gate,
    cloud: Arc<dyn CloudMaskModel>,
    stream: &[Sample],
) -> Result<RunReport> {
    Orchestrator::new(cfg, edge, gate, cloud)?.run(stream)
}
