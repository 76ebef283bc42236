//! Line-delimited dataset container.
//!
//! Record 0 is a header `{"format", "version", "scenes", "tasks"}`. Each
//! scene record stores points and colors as base64 of little-endian f64
//! triples, and index lists as base64 of little-endian u32. Task records
//! follow all scene records and reference scenes by position.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{BBox, Camera, Instance, Scene, Vec3};
use crate::tasks::{PromptSpec, TaskKind, TaskSample};

pub const FORMAT: &str = "promptq-dataset";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub scene: Scene,
    pub tasks: Vec<TaskSample>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    scenes: usize,
    tasks: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    class_id: usize,
    color: usize,
    center: Vec3,
    size: Vec3,
    points: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    position: Vec3,
    look_at: Vec3,
    fov: f64,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    record: String,
    id: u64,
    num_points: usize,
    points: String,
    colors: String,
    segment_ids: Option<String>,
    instances: Vec<InstanceRecord>,
    cameras: Vec<CameraRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    record: String,
    scene: usize,
    kind: TaskKind,
    prompt: PromptSpec,
    targets: Vec<usize>,
    answer: Vec<usize>,
}

fn encode_f64s(v: &[Vec3]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 24);
    for p in v {
        for x in p {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    B64.encode(bytes)
}

fn decode_f64s(s: &str, n: usize) -> std::result::Result<Vec<Vec3>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() != n * 24 {
        return Err(format!("expected {} bytes, found {}", n * 24, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| std::array::from_fn(|a| f64::from_le_bytes(c[a * 8..a * 8 + 8].try_into().unwrap())))
        .collect())
}

fn encode_u32s(v: &[usize]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for &x in v {
        bytes.extend_from_slice(&(x as u32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_u32s(s: &str) -> std::result::Result<Vec<usize>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("index block length {} not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

impl Dataset {
    pub fn num_tasks(&self) -> usize {
        self.entries.iter().map(|e| e.tasks.len()).sum()
    }

    pub fn to_string(&self) -> String {
        let mut out = String::new();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            scenes: self.entries.len(),
            tasks: self.num_tasks(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for e in &self.entries {
            let s = &e.scene;
            let rec = SceneRecord {
                record: "scene".into(),
                id: s.id,
                num_points: s.len(),
                points: encode_f64s(&s.points),
                colors: encode_f64s(&s.colors),
                segment_ids: (!s.segment_ids.is_empty()).then(|| encode_u32s(&s.segment_ids)),
                instances: s
                    .instances
                    .iter()
                    .map(|i| InstanceRecord {
                        class_id: i.class_id,
                        color: i.color,
                        center: i.bbox.center,
                        size: i.bbox.size,
                        points: encode_u32s(&i.point_indices),
                    })
                    .collect(),
                cameras: s
                    .cameras
                    .iter()
                    .map(|c| CameraRecord {
                        position: c.position,
                        look_at: c.look_at,
                        fov: c.fov,
                        width: c.width,
                        height: c.height,
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("scene serializes"));
            out.push('\n');
        }
        for (k, e) in self.entries.iter().enumerate() {
            for t in &e.tasks {
                let rec = TaskRecord {
                    record: "task".into(),
                    scene: k,
                    kind: t.kind,
                    prompt: t.prompt.clone(),
                    targets: t.targets.clone(),
                    answer: t.answer.clone(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("task serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split_terminator('\n').enumerate();
        let fail = |record: usize, message: String| Error::Dataset { record, message };
        let (_, first) = lines.next().ok_or_else(|| fail(0, "empty file".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| fail(0, e.to_string()))?;
        if header.format != FORMAT {
            return Err(fail(0, format!("unknown format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(fail(0, format!("unsupported version {}", header.version)));
        }
        let mut entries = Vec::with_capacity(header.scenes);
        for k in 0..header.scenes {
            let record = k + 1;
            let (_, line) = lines
                .next()
                .ok_or_else(|| fail(record, "file ends before this scene record".into()))?;
            let rec: SceneRecord = serde_json::from_str(line).map_err(|e| fail(record, e.to_string()))?;
            if rec.record != "scene" {
                return Err(fail(record, format!("expected a scene record, found {:?}", rec.record)));
            }
            let n = rec.num_points;
            let instances = rec
                .instances
                .into_iter()
                .map(|i| {
                    Ok(Instance {
                        point_indices: decode_u32s(&i.points)?,
                        class_id: i.class_id,
                        bbox: BBox {
                            center: i.center,
                            size: i.size,
                        },
                        color: i.color,
                    })
                })
                .collect::<std::result::Result<Vec<_>, String>>()
                .map_err(|m| fail(record, m))?;
            let scene = Scene {
                id: rec.id,
                points: decode_f64s(&rec.points, n).map_err(|m| fail(record, m))?,
                colors: decode_f64s(&rec.colors, n).map_err(|m| fail(record, m))?,
                segment_ids: match rec.segment_ids {
                    Some(s) => decode_u32s(&s).map_err(|m| fail(record, m))?,
                    None => Vec::new(),
                },
                instances,
                cameras: rec
                    .cameras
                    .into_iter()
                    .map(|c| Camera {
                        position: c.position,
                        look_at: c.look_at,
                        fov: c.fov,
                        width: c.width,
                        height: c.height,
                    })
                    .collect(),
            };
            scene.validate().map_err(|e| fail(record, e.to_string()))?;
            entries.push(Entry {
                scene,
                tasks: Vec::new(),
            });
        }
        for t in 0..header.tasks {
            let record = header.scenes + 1 + t;
            let (_, line) = lines
                .next()
                .ok_or_else(|| fail(record, "file ends before this task record".into()))?;
            let rec: TaskRecord = serde_json::from_str(line).map_err(|e| fail(record, e.to_string()))?;
            if rec.record != "task" {
                return Err(fail(record, format!("expected a task record, found {:?}", rec.record)));
            }
            let entry = entries
                .get_mut(rec.scene)
                .ok_or_else(|| fail(record, format!("unknown scene {}", rec.scene)))?;
            let task = TaskSample {
                kind: rec.kind,
                prompt: rec.prompt,
                targets: rec.targets,
                answer: rec.answer,
            };
            task.validate(&entry.scene, &crate::vocab::Vocab::default())
                .map_err(|e| fail(record, e.to_string()))?;
            entry.tasks.push(task);
        }
        if let Some((i, _)) = lines.next() {
            return Err(fail(i, "unexpected trailing record".into()));
        }
        Ok(Dataset { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Hex SHA-256 of a byte string; used for file checksums in reports.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
