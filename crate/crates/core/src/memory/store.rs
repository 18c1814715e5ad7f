use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::entry::{MemoryPayload, RecordKind};
use crate::error::{EqaError, Result};
use crate::simulator::FrameTruth;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VECTOR_FILE: &str = "vectors.f32";
const FORMAT: &str = "eqa-memory";
const VERSION: u32 = 1;
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub index: u64,
    pub scene_id: u32,
    pub payload: MemoryPayload,
    pub embedding: Vec<f32>,
    pub superseded: bool,
}

impl VectorRecord {
    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }
}

/// Dense-vector library partitioned by scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    next_index: u64,
    records: Vec<VectorRecord>,
    /// scene id → positions in `records`
    partitions: BTreeMap<u32, Vec<usize>>,
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out: Vec<f32> = v.iter().map(|x| (x / n) as f32).collect();
    let n2 = norm(&out);
    out.iter_mut().for_each(|x| *x = (*x as f64 / n2) as f32);
    out
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            next_index: 0,
            records: Vec::new(),
            partitions: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.partitions.keys().copied()
    }

    pub fn has_scene(&self, scene_id: u32) -> bool {
        self.partitions.contains_key(&scene_id)
    }

    /// A scene id not used by any record.
    pub fn fresh_scene_id(&self) -> u32 {
        self.partitions.keys().next_back().map_or(0, |m| m + 1)
    }

    /// All records of a scene, superseded ones included.
    pub fn partition(&self, scene_id: u32) -> impl Iterator<Item = &VectorRecord> + '_ {
        self.partitions
            .get(&scene_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    /// Live (non-superseded) records of a scene.
    pub fn live(&self, scene_id: u32) -> impl Iterator<Item = &VectorRecord> + '_ {
        self.partition(scene_id).filter(|r| !r.superseded)
    }

    pub fn get(&self, index: u64) -> Option<&VectorRecord> {
        self.records
            .binary_search_by_key(&index, |r| r.index)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Appends a record with a precomputed embedding.
    pub fn insert_embedded(&mut self, payload: MemoryPayload, scene_id: u32, embedding: Vec<f32>) -> Result<u64> {
        if embedding.len() != self.dim {
            return Err(EqaError::Dimension {
                expected: self.dim,
                got: embedding.len(),
            });
        }
        let n = norm(&embedding);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(EqaError::InvalidInput(format!("embedding norm {n} is not 1")));
        }
        payload.validate()?;
        let index = self.next_index;
        self.next_index += 1;
        self.partitions.entry(scene_id).or_default().push(self.records.len());
        self.records.push(VectorRecord {
            index,
            scene_id,
            payload,
            embedding,
            superseded: false,
        });
        Ok(index)
    }

    /// Encodes and appends an entry. With an image the embedding is the
    /// normalized mean of the text and image embeddings.
    pub fn insert(
        &mut self,
        payload: MemoryPayload,
        scene_id: u32,
        encoder: &dyn Encoder,
        image: Option<(&RgbImage, Option<&FrameTruth>)>,
    ) -> Result<u64> {
        if encoder.dim() != self.dim {
            return Err(EqaError::Dimension {
                expected: self.dim,
                got: encoder.dim(),
            });
        }
        let text = encoder.encode_text(&payload.canonical_text());
        let embedding = match image {
            Some((img, truth)) => {
                let iv = encoder.encode_image(img, truth);
                let mean: Vec<f64> = text.iter().zip(&iv).map(|(&a, &b)| (a as f64 + b as f64) / 2.0).collect();
                unit_f32(&mean)
            }
            None => text,
        };
        self.insert_embedded(payload, scene_id, embedding)
    }

    /// Marks a record superseded. Idempotent.
    pub fn supersede(&mut self, index: u64) -> Result<()> {
        let pos = self
            .records
            .binary_search_by_key(&index, |r| r.index)
            .map_err(|_| EqaError::UnknownIndex(index))?;
        self.records[pos].superseded = true;
        Ok(())
    }

    /// Writes `manifest.jsonl` and `vectors.f32` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| EqaError::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut manifest = Vec::new();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            dim: self.dim,
            next_index: self.next_index,
            records: self.records.len(),
        };
        serde_json::to_writer(&mut manifest, &header).expect("header serializes");
        manifest.push(b'\n');
        let mut vectors = Vec::with_capacity(self.records.len() * self.dim * 4);
        for r in &self.records {
            let line = ManifestLine {
                index: r.index,
                scene_id: r.scene_id,
                kind: r.kind(),
                superseded: r.superseded,
                payload: r.payload.clone(),
            };
            serde_json::to_writer(&mut manifest, &line).expect("record serializes");
            manifest.push(b'\n');
            for x in &r.embedding {
                vectors.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_file(&manifest_path, &manifest)?;
        write_file(&dir.join(VECTOR_FILE), &vectors)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let vector_path = dir.join(VECTOR_FILE);
        let persist_err = |path: &Path, reason: String| EqaError::Persist {
            path: path.to_path_buf(),
            reason,
        };
        let file = fs::File::open(&manifest_path).map_err(|e| EqaError::io(&manifest_path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| persist_err(&manifest_path, "empty manifest".into()))?
            .map_err(|e| EqaError::io(&manifest_path, e))?;
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| persist_err(&manifest_path, format!("line 1 (header): {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(persist_err(
                &manifest_path,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        if header.dim == 0 {
            return Err(persist_err(&manifest_path, "dimension 0".into()));
        }
        let bytes = fs::read(&vector_path).map_err(|e| EqaError::io(&vector_path, e))?;
        let row = header.dim * 4;
        let mut store = Self::new(header.dim);
        let mut count = 0usize;
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| EqaError::io(&manifest_path, e))?;
            let lineno = n + 2;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| persist_err(&manifest_path, format!("line {lineno}: {e}")))?;
            let name = format!("record {} (manifest line {lineno})", rec.index);
            if rec.kind != rec.payload.kind() {
                return Err(persist_err(&manifest_path, format!("{name}: kind does not match payload")));
            }
            if let Some(last) = store.records.last() {
                if rec.index <= last.index {
                    return Err(persist_err(&manifest_path, format!("{name}: index out of order or duplicated")));
                }
            }
            if rec.index >= header.next_index {
                return Err(persist_err(&manifest_path, format!("{name}: index beyond the stored counter")));
            }
            let start = count * row;
            if bytes.len() < start + row {
                return Err(persist_err(
                    &vector_path,
                    format!("{name}: vector data truncated ({} bytes, need {})", bytes.len(), start + row),
                ));
            }
            let embedding: Vec<f32> = bytes[start..start + row]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let nrm = norm(&embedding);
            if !nrm.is_finite() || (nrm - 1.0).abs() > UNIT_TOL {
                return Err(persist_err(&vector_path, format!("{name}: embedding norm {nrm} is not 1")));
            }
            rec.payload
                .validate()
                .map_err(|e| persist_err(&manifest_path, format!("{name}: {e}")))?;
            store.partitions.entry(rec.scene_id).or_default().push(store.records.len());
            store.records.push(VectorRecord {
                index: rec.index,
                scene_id: rec.scene_id,
                payload: rec.payload,
                embedding,
                superseded: rec.superseded,
            });
            count += 1;
        }
        if count != header.records {
            return Err(persist_err(
                &manifest_path,
                format!("header announces {} records, found {count}", header.records),
            ));
        }
        if bytes.len() != count * row {
            return Err(persist_err(
                &vector_path,
                format!("{} trailing bytes after record {}", bytes.len() - count * row, count.saturating_sub(1)),
            ));
        }
        store.next_index = header.next_index;
        Ok(store)
    }
}

fn write_file(path: &Path, data: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| EqaError::io(path, e))?;
    f.write_all(data).map_err(|e| EqaError::io(path, e))?;
    f.sync_all().map_err(|e| EqaError::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    next_index: u64,
    records: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    index: u64,
    scene_id: u32,
    kind: RecordKind,
    superseded: bool,
    payload: MemoryPayload,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::memory::encoder::{MockEncoder, MockMode};
    use crate::memory::entry::GlobalMemoryEntry;

    fn room(name: &str) -> MemoryPayload {
        MemoryPayload::Global(GlobalMemoryEntry::Room { category: name.into(), position: [1.0, 2.0] })
    }

    #[test]
    fn indices_are_sequential_and_never_reused() {
        let enc = MockEncoder::new(16, 0, MockMode::Hash);
        let mut s = MemoryStore::new(16);
        assert_eq!(s.insert(room("kitchen"), 0, &enc, None).unwrap(), 0);
        assert_eq!(s.insert(room("study"), 0, &enc, None).unwrap(), 1);
        s.supersede(0).unwrap();
        s.supersede(0).unwrap();
        assert_eq!(s.insert(room("kitchen"), 0, &enc, None).unwrap(), 2);
        assert_eq!(s.live(0).map(|r| r.index).collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(s.supersede(999), Err(EqaError::UnknownIndex(999))));
    }

    #[test]
    fn wrong_encoder_dimension() {
        let enc = MockEncoder::new(8, 0, MockMode::Hash);
        let mut s = MemoryStore::new(16);
        assert!(matches!(s.insert(room("a"), 0, &enc, None), Err(EqaError::Dimension { .. })));
    }

    #[test]
    fn image_embedding_is_unit_mean() {
        let enc = MockEncoder::new(32, 0, MockMode::Semantic);
        let mut s = MemoryStore::new(32);
        let img = RgbImage::from_pixel(4, 4, image::Rgb([200, 10, 10]));
        let i = s.insert(room("kitchen"), 3, &enc, Some((&img, None))).unwrap();
        let r = s.get(i).unwrap();
        assert!((norm(&r.embedding) - 1.0).abs() < 1e-6);
        let t = enc.encode_text(&room("kitchen").canonical_text());
        assert_ne!(r.embedding, t);
        assert_eq!(s.fresh_scene_id(), 4);
    }

    #[test]
    fn roundtrip_empty_and_small() {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::new(8);
        s.persist(dir.path()).unwrap();
        assert_eq!(MemoryStore::load(dir.path()).unwrap(), s);

        let enc = MockEncoder::new(8, 0, MockMode::Hash);
        let mut s = MemoryStore::new(8);
        s.insert(room("kitchen"), 1, &enc, None).unwrap();
        s.insert(
            MemoryPayload::Global(GlobalMemoryEntry::Target {
                position: [0.1, 0.7, 0.0],
                category: "sofa".into(),
                description: "white sofa".into(),
                observer: Pose::new(0.3, 0.1, 2.0),
            }),
            2,
            &enc,
            None,
        )
        .unwrap();
        s.supersede(0).unwrap();
        s.persist(dir.path()).unwrap();
        assert_eq!(MemoryStore::load(dir.path()).unwrap(), s);
    }

    #[test]
    fn corrupt_vectors_name_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let enc = MockEncoder::new(8, 0, MockMode::Hash);
        let mut s = MemoryStore::new(8);
        for name in ["a", "b", "c"] {
            s.insert(room(name), 0, &enc, None).unwrap();
        }
        s.persist(dir.path()).unwrap();
        let vp = dir.path().join(VECTOR_FILE);
        let bytes = fs::read(&vp).unwrap();
        fs::write(&vp, &bytes[..bytes.len() - 3]).unwrap();
        let err = MemoryStore::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("record 2"), "{err}");

        let mut bad = bytes.clone();
        bad[32..36].copy_from_slice(&5.0f32.to_le_bytes());
        fs::write(&vp, &bad).unwrap();
        let err = MemoryStore::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn corrupt_manifest_line() {
        let dir = tempfile::tempdir().unwrap();
        let enc = MockEncoder::new(8, 0, MockMode::Hash);
        let mut s = MemoryStore::new(8);
        s.insert(room("a"), 0, &enc, None).unwrap();
        s.persist(dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).unwrap();
        fs::write(&mp, text.replace("\"superseded\":false", "\"superseded\":7")).unwrap();
        let err = MemoryStore::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
