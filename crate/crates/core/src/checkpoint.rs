//! Checkpoint files: a magic line, a one-line JSON header naming every
//! array with its shape and offset, then the arrays as little-endian f32.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::{Adam, ParamSet};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &str = "AVFUSION-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<Entry>,
}

fn mismatch(section: &str, detail: String) -> Error {
    Error::ArchitectureMismatch {
        section: section.to_string(),
        detail,
    }
}

impl Section {
    /// Parameters as `param/<name>`, buffers as `buffer/<name>`.
    pub fn from_params(name: &str, params: &ParamSet<f32>) -> Section {
        let mut entries: Vec<Entry> = params
            .iter()
            .map(|(n, t)| Entry {
                name: format!("param/{n}"),
                shape: t.shape(),
                data: t.data().to_vec(),
            })
            .collect();
        entries.extend(params.buffers().map(|(n, b)| Entry {
            name: format!("buffer/{n}"),
            shape: [1, 1, 1, b.len()],
            data: b.clone(),
        }));
        Section {
            name: name.to_string(),
            entries,
        }
    }

    /// Overwrites every parameter and buffer; the layouts must agree
    /// exactly.
    pub fn load_into(&self, params: &mut ParamSet<f32>) -> Result<()> {
        let expected = Section::from_params(&self.name, params);
        let names = |s: &Section| s.entries.iter().map(|e| (e.name.clone(), e.shape)).collect::<Vec<_>>();
        let (want, got) = (names(&expected), names(self));
        if want != got {
            let first = want
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("expected {} arrays, found {}", want.len(), got.len()));
            return Err(mismatch(&self.name, first));
        }
        for e in &self.entries {
            let ok = if let Some(n) = e.name.strip_prefix("param/") {
                params.set_value(n, Tensor::from_vec(e.shape, e.data.clone()))
            } else if let Some(n) = e.name.strip_prefix("buffer/") {
                params.set_buffer(n, e.data.clone())
            } else {
                false
            };
            if !ok {
                return Err(mismatch(&self.name, format!("cannot place {}", e.name)));
            }
        }
        Ok(())
    }

    /// Adam moments as `m/<param>` and `v/<param>`, step count as `step`.
    pub fn from_adam(name: &str, opt: &Adam<f32>, params: &ParamSet<f32>) -> Section {
        let (m, v) = opt.moments();
        let mut entries = vec![Entry {
            name: "step".into(),
            shape: [1, 1, 1, 2],
            // u64 split into two exactly representable halves
            data: vec![(opt.steps() >> 24) as f32, (opt.steps() & 0xFF_FFFF) as f32],
        }];
        for (prefix, moments) in [("m", m), ("v", v)] {
            for ((n, t), vals) in params.iter().zip(moments) {
                entries.push(Entry {
                    name: format!("{prefix}/{n}"),
                    shape: t.shape(),
                    data: vals.clone(),
                });
            }
        }
        Section {
            name: name.to_string(),
            entries,
        }
    }

    pub fn load_adam(&self, opt: &mut Adam<f32>, params: &ParamSet<f32>) -> Result<()> {
        let step = self
            .entries
            .first()
            .filter(|e| e.name == "step" && e.data.len() == 2)
            .map(|e| ((e.data[0] as u64) << 24) + e.data[1] as u64)
            .ok_or_else(|| mismatch(&self.name, "missing step entry".into()))?;
        let n = params.len();
        if self.entries.len() != 1 + 2 * n {
            return Err(mismatch(&self.name, format!("expected {} moment arrays, found {}", 2 * n, self.entries.len() - 1)));
        }
        let m = self.entries[1..=n].iter().map(|e| e.data.clone()).collect();
        let v = self.entries[1 + n..].iter().map(|e| e.data.clone()).collect();
        if !opt.restore(step, m, v) {
            return Err(mismatch(&self.name, "optimizer moment shapes differ".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Shape,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Value,
    meta: Value,
    sections: Vec<SectionHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Value,
    /// Free-form run information (epoch, metrics, ...).
    pub meta: Value,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new(architecture: Value, meta: Value) -> Checkpoint {
        Checkpoint {
            architecture,
            meta,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| mismatch(name, "section missing from checkpoint".into()))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn expect_architecture(&self, expected: &Value) -> Result<()> {
        if &self.architecture != expected {
            return Err(mismatch("architecture", format!("checkpoint has {}, model expects {}", self.architecture, expected)));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut offset = 0;
        let sections = self
            .sections
            .iter()
            .map(|s| SectionHeader {
                name: s.name.clone(),
                entries: s
                    .entries
                    .iter()
                    .map(|e| {
                        let h = EntryHeader {
                            name: e.name.clone(),
                            shape: e.shape,
                            offset,
                        };
                        offset += e.data.len();
                        h
                    })
                    .collect(),
            })
            .collect();
        let header = Header {
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            sections,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for s in &self.sections {
            for e in &s.entries {
                for v in &e.data {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
            _ => e.into(),
        })?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(&line)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint("truncated data block".into()));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut sections = Vec::new();
        for s in header.sections {
            let mut entries = Vec::new();
            for e in s.entries {
                let len: usize = e.shape.iter().product();
                let data = floats
                    .get(e.offset..e.offset + len)
                    .ok_or_else(|| Error::Checkpoint(format!("array {} runs past the data block", e.name)))?
                    .to_vec();
                entries.push(Entry {
                    name: e.name,
                    shape: e.shape,
                    data,
                });
            }
            sections.push(Section { name: s.name, entries });
        }
        Ok(Checkpoint {
            architecture: header.architecture,
            meta: header.meta,
            sections,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use serde_json::json;

    fn params() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.add("a", Tensor::from_vec([1, 1, 1, 3], vec![1.0, -2.5, 3.25]));
        p.add("b", Tensor::from_vec([2, 1, 1, 1], vec![0.5, 7.0]));
        p.add_buffer("mean", vec![0.1, 0.2]);
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = params();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let mut q = p.clone();
        opt.step(&mut q, &[Some(Tensor::full([1, 1, 1, 3], 1.0)), None]);
        let mut ck = Checkpoint::new(json!({"depth": 2}), json!({"epoch": 3}));
        ck.push(Section::from_params("main", &q));
        ck.push(Section::from_adam("adam", &opt, &q));
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);
        let mut fresh = params();
        back.section("main").unwrap().load_into(&mut fresh).unwrap();
        assert_eq!(fresh.get(0), q.get(0));
        let mut opt2 = Adam::new(AdamConfig::default(), &fresh);
        back.section("adam").unwrap().load_adam(&mut opt2, &fresh).unwrap();
        assert_eq!(opt2.steps(), 1);
        assert_eq!(opt2.moments(), opt.moments());
    }

    #[test]
    fn layout_differences_are_rejected() {
        let s = Section::from_params("main", &params());
        let mut other = ParamSet::<f32>::new();
        other.add("a", Tensor::zeros([1, 1, 1, 4]));
        assert!(matches!(s.load_into(&mut other), Err(Error::ArchitectureMismatch { .. })));
        let ck = Checkpoint::new(json!({"depth": 2}), Value::Null);
        assert!(ck.expect_architecture(&json!({"depth": 3})).is_err());
        assert!(ck.section("main").is_err());
    }

    #[test]
    fn garbage_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, "hello\n").unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Checkpoint(_))));
        assert!(matches!(Checkpoint::read(&dir.path().join("none")), Err(Error::MissingPath(_))));
    }
}
