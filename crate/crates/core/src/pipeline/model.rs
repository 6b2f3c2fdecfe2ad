use std::collections::HashMap;
use std::path::Path;

use coref_autograd::{Mat, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::config::{ClustererConfig, DetectorConfig, PipelineConfig};
use crate::clusterer::Clusterer;
use crate::corpus::{Cluster, Document, Mention};
use crate::detector::{Detector, HymrConfig};
use crate::encoder::{Backend, Encoder, EncoderConfig, HiddenMatrix, Vocab};
use crate::error::{CorefError, Result};

/// The trained stages a prediction run needs, independent of how they are
/// implemented.
pub trait Backbone: Sync {
    type State: Send;

    /// Candidate mentions in document order, plus whatever the clustering
    /// step needs to reuse.
    fn detect(&self, doc: &Document) -> Result<(Vec<Mention>, Self::State)>;

    fn cluster(&self, doc: &Document, mentions: &[Mention], state: &Self::State) -> Result<Vec<Cluster>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Architecture {
    encoder: EncoderConfig,
    detector: DetectorConfig,
    clusterer: ClustererConfig,
    hymr: HymrConfig,
}

pub struct CorefModel {
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub detector: Detector,
    pub clusterer: Clusterer,
    /// Inference-time span limits; may differ from the training setting.
    pub hymr: HymrConfig,
    pub cluster_threshold: f64,
    arch: Architecture,
}

impl CorefModel {
    /// Fresh weights from `rng`. With the pretrained backend the encoder
    /// weights are then replaced by those in `encoder.pretrained_path`.
    pub fn new(cfg: &PipelineConfig, vocab: Vocab, rng: &mut ChaCha8Rng) -> Result<Self> {
        let arch = Architecture {
            encoder: cfg.encoder.clone(),
            detector: cfg.detector.clone(),
            clusterer: cfg.clusterer.clone(),
            hymr: cfg.hymr,
        };
        let mut model = Self::build(arch, vocab, rng)?;
        model.cluster_threshold = cfg.clusterer.threshold;
        if cfg.encoder.backend == Backend::Pretrained {
            let path = cfg.encoder.pretrained_path.as_deref().expect("validated");
            model.load_encoder_weights(path)?;
        }
        Ok(model)
    }

    fn build(arch: Architecture, vocab: Vocab, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let d_h = arch.encoder.d_h;
        let encoder = Encoder::new(&mut store, &arch.encoder, vocab.len(), rng)?;
        let detector = Detector::new(&mut store, arch.detector.mode, d_h, arch.detector.d_r, rng);
        let clusterer = Clusterer::new(&mut store, d_h, arch.clusterer.hidden, rng);
        Ok(Self {
            vocab,
            store,
            encoder,
            detector,
            clusterer,
            hymr: arch.hymr,
            cluster_threshold: arch.clusterer.threshold,
            arch,
        })
    }

    pub fn hidden(&self, doc: &Document) -> Result<HiddenMatrix> {
        self.encoder.hidden(&self.store, doc, &self.vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = |msg: String| CorefError::Checkpoint { path: path.to_path_buf(), msg };
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .store
            .ids()
            .map(|id| {
                let m = self.store.get(id);
                let data = m.iter().flat_map(|v| v.to_le_bytes()).collect();
                (self.store.name(id).to_string(), vec![m.nrows(), m.ncols()], data)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, shape, data)| Ok((name.as_str(), TensorView::new(Dtype::F64, shape.clone(), data).map_err(|e| ckpt(e.to_string()))?)))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("architecture".to_string(), serde_json::to_string(&self.arch)?);
        meta.insert("vocab".to_string(), serde_json::to_string(self.vocab.tokens())?);
        let out = safetensors::serialize(views, Some(meta)).map_err(|e| ckpt(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CorefError::io(dir, e))?;
        }
        std::fs::write(path, out).map_err(|e| CorefError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = |msg: String| CorefError::Checkpoint { path: path.to_path_buf(), msg };
        let bytes = std::fs::read(path).map_err(|e| CorefError::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt(e.to_string()))?;
        let meta = header.metadata().clone().ok_or_else(|| ckpt("missing metadata".into()))?;
        let field = |k: &str| meta.get(k).ok_or_else(|| ckpt(format!("missing metadata key {k}")));
        let arch: Architecture = serde_json::from_str(field("architecture")?)?;
        let vocab = Vocab::from_tokens(serde_json::from_str(field("vocab")?)?);
        let mut model = Self::build(arch, vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
        let tensors = read_tensors(&bytes).map_err(ckpt)?;
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.name(id).to_string();
            let value = tensors.get(&name).ok_or_else(|| ckpt(format!("missing tensor {name}")))?;
            if value.dim() != model.store.get(id).dim() {
                return Err(ckpt(format!("tensor {name} has shape {:?}, expected {:?}", value.dim(), model.store.get(id).dim())));
            }
            model.store.set(id, value.clone());
        }
        if tensors.len() != model.store.len() {
            return Err(ckpt(format!("{} tensors for {} parameters", tensors.len(), model.store.len())));
        }
        Ok(model)
    }

    /// Copies every `encoder.*` tensor from another checkpoint.
    fn load_encoder_weights(&mut self, path: &Path) -> Result<()> {
        let ckpt = |msg: String| CorefError::Checkpoint { path: path.to_path_buf(), msg };
        let bytes = std::fs::read(path).map_err(|e| CorefError::io(path, e))?;
        let tensors = read_tensors(&bytes).map_err(ckpt)?;
        let mut loaded = 0;
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id).to_string();
            if !name.starts_with("encoder.") {
                continue;
            }
            let value = tensors.get(&name).ok_or_else(|| ckpt(format!("missing encoder tensor {name}")))?;
            if value.dim() != self.store.get(id).dim() {
                return Err(ckpt(format!("encoder tensor {name} has shape {:?}, expected {:?}", value.dim(), self.store.get(id).dim())));
            }
            self.store.set(id, value.clone());
            loaded += 1;
        }
        log::info!("loaded {loaded} encoder tensors from {}", path.display());
        Ok(())
    }
}

fn read_tensors(bytes: &[u8]) -> std::result::Result<HashMap<String, Mat>, String> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
    st.tensors()
        .into_iter()
        .map(|(name, view)| {
            if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
                return Err(format!("tensor {name} must be a 2-D f64 matrix"));
            }
            let values: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = Mat::from_shape_vec((view.shape()[0], view.shape()[1]), values).map_err(|e| e.to_string())?;
            Ok((name, m))
        })
        .collect()
}

impl Backbone for CorefModel {
    type State = HiddenMatrix;

    fn detect(&self, doc: &Document) -> Result<(Vec<Mention>, HiddenMatrix)> {
        let h = self.hidden(doc)?;
        let mentions = self.detector.detect_mentions(&self.store, doc, &h, &self.hymr)?;
        Ok((mentions, h))
    }

    fn cluster(&self, _doc: &Document, mentions: &[Mention], h: &HiddenMatrix) -> Result<Vec<Cluster>> {
        self.clusterer.cluster_mentions(&self.store, mentions, h, self.cluster_threshold)
    }
}
