//! Dataset generation, on-disk layout and conversion to model inputs.
//!
//! A dataset directory holds
//! - `dataset.json`: the generation config and seed,
//! - `vocab.txt`: `token <word>` lines, then `answer <label>` lines,
//! - `scenes.jsonl`: one scene per line with its split and the byte range
//!   of its detections inside `detections.bin`,
//! - `detections.bin`: little-endian per-frame detections and contexts,
//! - `records.jsonl`: one question per line referencing its scene.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{OcrlError, Result};
use crate::par;
use crate::qencoder::Vocab;
use crate::scenegen::{
    generate_qa, generate_scene, render_detections, vocabulary, AnswerSpace, Category, Detection, DetectionVideo,
    QaConfig, QaItem, RenderConfig, SceneConfig, SceneSpec, Template,
};
use crate::seeds;
use crate::tubelets::{select_tubelets, track, TrackParams};
use crate::video::VideoInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(OcrlError::Config(format!("unknown split `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub scenes: usize,
    pub qa: QaConfig,
    pub scene: SceneConfig,
    pub render: RenderConfig,
    pub track: TrackParams,
    /// Fractions of scenes in train and test; validation takes the rest.
    pub train_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            qa: QaConfig::default(),
            scene: SceneConfig::default(),
            render: RenderConfig::default(),
            track: TrackParams::default(),
            train_fraction: 0.7,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub spec: SceneSpec,
    pub split: Split,
    pub video: DetectionVideo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scene: usize,
    pub split: Split,
    pub tokens: Vec<String>,
    pub category: Category,
    pub template: Template,
    pub answer: usize,
    /// The answer label spelled out; redundant with `answer`.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub seed: u64,
    pub vocab: Vocab,
    pub answers: AnswerSpace,
    pub scenes: Vec<SceneEntry>,
    pub records: Vec<Record>,
}

fn splits(n: usize, cfg: &DataConfig, seed: u64) -> Result<Vec<Split>> {
    let (tr, te) = (cfg.train_fraction, cfg.test_fraction);
    if !(0.0..=1.0).contains(&tr) || !(0.0..=1.0).contains(&te) || tr + te > 1.0 {
        return Err(OcrlError::Config(format!("split fractions {tr}/{te} invalid")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive(seed, "split")));
    let n_train = (tr * n as f64).round() as usize;
    let n_test = ((te * n as f64).round() as usize).min(n - n_train);
    let mut out = vec![Split::Val; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_test {
            Split::Test
        } else {
            Split::Val
        };
    }
    Ok(out)
}

/// Generates scenes, detections and questions. Each scene draws from its
/// own indexed sub-seeds, so the result does not depend on scheduling.
pub fn generate_dataset(config: &DataConfig, seed: u64) -> Result<Dataset> {
    let answers = AnswerSpace::new(config.qa.max_count);
    let split_of = splits(config.scenes, config, seed)?;
    let idx: Vec<usize> = (0..config.scenes).collect();
    let per_scene = par::map(&idx, |&i| -> Result<(SceneEntry, Vec<QaItem>)> {
        let spec = generate_scene(seeds::derive_index(seed, "scene", i as u64), &config.scene)?;
        let video = render_detections(&spec, &config.render, seeds::derive_index(seed, "render", i as u64))?;
        let qa = generate_qa(&spec, seeds::derive_index(seed, "qa", i as u64), &config.qa)?;
        Ok((
            SceneEntry {
                spec,
                split: split_of[i],
                video,
            },
            qa,
        ))
    });
    let mut scenes = Vec::with_capacity(config.scenes);
    let mut records = Vec::new();
    for (i, r) in per_scene.into_iter().enumerate() {
        let (entry, qa) = r?;
        for q in qa {
            records.push(Record {
                scene: i,
                split: entry.split,
                label: answers.labels[q.answer].clone(),
                tokens: q.tokens,
                category: q.category,
                template: q.template,
                answer: q.answer,
            });
        }
        scenes.push(entry);
    }
    Ok(Dataset {
        config: config.clone(),
        seed,
        vocab: Vocab::new(vocabulary())?,
        answers,
        scenes,
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct SceneLine {
    index: usize,
    split: Split,
    detections: [usize; 2],
    spec: SceneSpec,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    config: DataConfig,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| OcrlError::Data(format!("{v} does not fit the detection format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_video(v: &DetectionVideo, d_a: usize, d_c: usize, out: &mut Vec<u8>) -> Result<()> {
    put_u32(out, v.frames.len())?;
    for (f, dets) in v.frames.iter().enumerate() {
        put_u32(out, dets.len())?;
        for d in dets {
            if d.appearance.len() != d_a {
                return Err(OcrlError::Data("appearance width differs from config".into()));
            }
            put_u32(out, d.true_id)?;
            put_f64s(out, &d.bbox);
            put_f64s(out, &[d.confidence]);
            put_f64s(out, &d.appearance);
        }
        if v.context[f].len() != d_c {
            return Err(OcrlError::Data("context width differs from config".into()));
        }
        put_f64s(out, &v.context[f]);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| OcrlError::Data("detection blob truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn decode_video(bytes: &[u8], width: f64, height: f64, d_a: usize, d_c: usize) -> Result<DetectionVideo> {
    let mut r = Reader { bytes, pos: 0 };
    let frames = r.u32()?;
    let mut out = DetectionVideo {
        width,
        height,
        frames: Vec::with_capacity(frames),
        context: Vec::with_capacity(frames),
    };
    for f in 0..frames {
        let n = r.u32()?;
        let mut dets = Vec::with_capacity(n);
        for _ in 0..n {
            let true_id = r.u32()?;
            let b = r.f64s(4)?;
            let confidence = r.f64s(1)?[0];
            dets.push(Detection {
                frame: f,
                bbox: [b[0], b[1], b[2], b[3]],
                appearance: r.f64s(d_a)?,
                confidence,
                true_id,
            });
        }
        out.frames.push(dets);
        out.context.push(r.f64s(d_c)?);
    }
    if r.pos != bytes.len() {
        return Err(OcrlError::Data("trailing bytes in detection record".into()));
    }
    Ok(out)
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it)?);
        s.push('\n');
    }
    Ok(s)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (d_a, d_c) = (self.config.render.appearance_dim, self.config.render.context_dim);
        let header = Header {
            seed: self.seed,
            config: self.config.clone(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&header)? + "\n")?;

        let mut vocab = String::new();
        for w in self.vocab.words() {
            vocab.push_str(&format!("token {w}\n"));
        }
        for a in &self.answers.labels {
            vocab.push_str(&format!("answer {a}\n"));
        }
        fs::write(dir.join("vocab.txt"), vocab)?;

        let mut blob = Vec::new();
        let mut lines = Vec::with_capacity(self.scenes.len());
        for (i, s) in self.scenes.iter().enumerate() {
            let start = blob.len();
            encode_video(&s.video, d_a, d_c, &mut blob)?;
            lines.push(SceneLine {
                index: i,
                split: s.split,
                detections: [start, blob.len()],
                spec: s.spec.clone(),
            });
        }
        fs::write(dir.join("detections.bin"), blob)?;
        fs::write(dir.join("scenes.jsonl"), jsonl(lines)?)?;
        fs::write(dir.join("records.jsonl"), jsonl(&self.records)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name))
                .map_err(|e| OcrlError::Data(format!("{}: {e}", dir.join(name).display())))
        };
        let header: Header = serde_json::from_str(&read("dataset.json")?)?;
        let (d_a, d_c) = (header.config.render.appearance_dim, header.config.render.context_dim);

        let mut words = Vec::new();
        let mut labels = Vec::new();
        for line in read("vocab.txt")?.lines() {
            match line.split_once(' ') {
                Some(("token", w)) => words.push(w.to_string()),
                Some(("answer", a)) => labels.push(a.to_string()),
                _ => return Err(OcrlError::Data(format!("bad vocabulary line `{line}`"))),
            }
        }
        let blob = fs::read(dir.join("detections.bin"))?;
        let mut scenes = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(dir.join("scenes.jsonl"))?).lines().enumerate() {
            let s: SceneLine = serde_json::from_str(&line?)?;
            if s.index != i {
                return Err(OcrlError::Data(format!("scene line {i} carries index {}", s.index)));
            }
            let [a, b] = s.detections;
            let bytes = blob
                .get(a..b)
                .ok_or_else(|| OcrlError::Data(format!("scene {i} detections outside blob")))?;
            let video = decode_video(bytes, s.spec.width, s.spec.height, d_a, d_c)?;
            scenes.push(SceneEntry {
                spec: s.spec,
                split: s.split,
                video,
            });
        }
        let mut records = Vec::new();
        for line in read("records.jsonl")?.lines() {
            let r: Record = serde_json::from_str(line)?;
            if r.scene >= scenes.len() || r.answer >= labels.len() {
                return Err(OcrlError::Data(format!("record `{}` points outside the dataset", r.tokens.join(" "))));
            }
            records.push(r);
        }
        Ok(Self {
            config: header.config,
            seed: header.seed,
            vocab: Vocab::new(words)?,
            answers: AnswerSpace { labels },
            scenes,
            records,
        })
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// A record ready for the model.
#[derive(Debug, Clone)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub video: Arc<VideoInput>,
    pub label: usize,
    pub category: Category,
}

/// Tracks every scene once and lays the selected tubelets out for the
/// model.
pub fn video_inputs(
    dataset: &Dataset,
    objects: usize,
    clips: usize,
    clip_len: usize,
) -> Result<Vec<Arc<VideoInput>>> {
    let (d_a, d_c) = (dataset.config.render.appearance_dim, dataset.config.render.context_dim);
    let params = dataset.config.track;
    par::map(&dataset.scenes, |s| -> Result<Arc<VideoInput>> {
        let tubes = track(&s.video, &params)?;
        let mut kept = select_tubelets(&tubes, objects)?;
        for t in &mut kept {
            t.slots.resize(s.video.frame_count(), None);
        }
        Ok(Arc::new(VideoInput::from_tubelets(&kept, &s.video.context, clips, clip_len, d_a, d_c)?))
    })
    .into_iter()
    .collect()
}

/// Examples of one split, in record order.
pub fn examples(dataset: &Dataset, videos: &[Arc<VideoInput>], split: Split) -> Result<Vec<Example>> {
    dataset
        .records_in(split)
        .map(|r| {
            Ok(Example {
                tokens: dataset.vocab.encode(&r.tokens)?,
                video: Arc::clone(&videos[r.scene]),
                label: r.answer,
                category: r.category,
            })
        })
        .collect()
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
