use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use plkg_core::agreement::{cohen_kappa, AgreementError, AgreementReport};
use plkg_core::annotation::{annotation_report, normalize_annotation};
use plkg_core::features::{extract_all, EngineConstants, FeatureError, ImageRaster, LineSegment, PathPolyline};
use plkg_core::ontology::{load_schema, SchemaError};
use plkg_core::{Annotation, Finding, Schema, ValidationReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_FILE: &str = "schema.json";
pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no {SCHEMA_FILE} in workspace {0}")]
    NoSchema(PathBuf),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("corrupt workspace index: {0}")]
    CorruptIndex(String),
    #[error("annotation rejected:\n{0}")]
    ValidationFailed(ValidationReport),
    #[error("revision conflict on `{id}`: stored {stored}, submitted {submitted}")]
    Conflict { id: String, stored: u64, submitted: u64 },
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("malformed sidecar {0}: {1}")]
    Sidecar(String, serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
}

/// Listing entry for `GET /annotations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub id: String,
    pub image_ref: String,
    pub annotator_id: String,
    pub revision: u64,
    pub labels: usize,
}

/// A directory holding a schema, images, one file per annotation and a
/// feature cache.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    schema: Schema,
    schema_bytes: Vec<u8>,
    constants: EngineConstants,
    index: RwLock<BTreeMap<String, Annotation>>,
    writer: Mutex<()>,
    quarantine: ValidationReport,
}

/// Ids double as file names.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// The report the service and the CLI give for an annotation: validation and
/// rules, plus the id check imposed by file storage.
pub fn check_annotation(schema: &Schema, ann: &Annotation) -> ValidationReport {
    let mut report = annotation_report(schema, ann);
    if !is_safe_id(&ann.id) {
        report.push(Finding::error("INVALID_ID", &ann.id, "annotation ids are limited to [A-Za-z0-9._-]"));
    }
    report
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace, StoreError> {
        Self::open_with(root, EngineConstants::default())
    }

    pub fn open_with(root: impl Into<PathBuf>, constants: EngineConstants) -> Result<Workspace, StoreError> {
        let root = root.into();
        let schema_path = root.join(SCHEMA_FILE);
        let schema_bytes = match fs::read(&schema_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NoSchema(root)),
            Err(e) => return Err(e.into()),
        };
        let schema = load_schema(&schema_bytes)?;

        let ann_dir = root.join(ANNOTATIONS_DIR);
        if ann_dir.exists() && !ann_dir.is_dir() {
            return Err(StoreError::CorruptIndex(format!("{} is not a directory", ann_dir.display())));
        }
        for dir in [ANNOTATIONS_DIR, IMAGES_DIR, FEATURES_DIR] {
            fs::create_dir_all(root.join(dir))?;
        }

        let mut index = BTreeMap::new();
        let mut quarantine = ValidationReport::new();
        let mut entries: Vec<PathBuf> =
            fs::read_dir(&ann_dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for path in entries {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let Some(stem) = name.strip_suffix(".json") else { continue };
            if name.starts_with('.') || !path.is_file() {
                continue;
            }
            let problem = match fs::read(&path).map(|b| Annotation::from_json(&b)) {
                Err(e) => Some(e.to_string()),
                Ok(Err(e)) => Some(e.to_string()),
                Ok(Ok(ann)) if ann.id != stem => Some(format!("file holds annotation `{}`", ann.id)),
                Ok(Ok(ann)) => {
                    index.insert(ann.id.clone(), ann);
                    None
                }
            };
            if let Some(msg) = problem {
                log::warn!("quarantined {}: {msg}", path.display());
                quarantine.push(Finding::warning("QUARANTINED", name, msg));
            }
        }
        log::info!("opened workspace {} with {} annotations", root.display(), index.len());
        Ok(Workspace {
            root,
            schema,
            schema_bytes,
            constants,
            index: RwLock::new(index),
            writer: Mutex::new(()),
            quarantine,
        })
    }

    /// Creates `root` with the given schema document and opens it.
    pub fn init(root: impl Into<PathBuf>, schema_document: &[u8]) -> Result<Workspace, StoreError> {
        let root = root.into();
        load_schema(schema_document)?;
        fs::create_dir_all(&root)?;
        write_atomic(&root, SCHEMA_FILE, schema_document)?;
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// The schema file exactly as stored on disk.
    pub fn schema_bytes(&self) -> &[u8] {
        &self.schema_bytes
    }

    pub fn constants(&self) -> &EngineConstants {
        &self.constants
    }

    /// Files skipped while building the index.
    pub fn quarantine(&self) -> &ValidationReport {
        &self.quarantine
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Annotation> {
        self.index.read().unwrap().get(id).cloned()
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.index.read().unwrap().values().cloned().collect()
    }

    pub fn summaries(&self) -> Vec<AnnotationSummary> {
        self.index
            .read()
            .unwrap()
            .values()
            .map(|a| AnnotationSummary {
                id: a.id.clone(),
                image_ref: a.image_ref.clone(),
                annotator_id: a.annotator_id.clone(),
                revision: a.revision,
                labels: a.assignments.len(),
            })
            .collect()
    }

    pub fn validate(&self, ann: &Annotation) -> ValidationReport {
        check_annotation(&self.schema, ann)
    }

    /// Stores `ann`, last writer wins. Returns the new revision.
    pub fn put_annotation(&self, ann: &Annotation) -> Result<u64, StoreError> {
        self.write(ann, None)
    }

    /// Stores `ann` only if its `revision` matches the stored one. New ids are
    /// accepted whatever their revision.
    pub fn put_annotation_checked(&self, ann: &Annotation) -> Result<u64, StoreError> {
        self.write(ann, Some(ann.revision))
    }

    fn write(&self, ann: &Annotation, expect: Option<u64>) -> Result<u64, StoreError> {
        let report = self.validate(ann);
        if report.has_errors() {
            return Err(StoreError::ValidationFailed(report));
        }
        let _guard = self.writer.lock().unwrap();
        let stored = self.index.read().unwrap().get(&ann.id).map(|a| a.revision);
        if let (Some(stored), Some(submitted)) = (stored, expect) {
            if stored != submitted {
                return Err(StoreError::Conflict { id: ann.id.clone(), stored, submitted });
            }
        }
        let mut record = ann.clone();
        record.revision = stored.map_or(1, |r| r + 1);
        let body = record.to_json_pretty();
        write_atomic(&self.root.join(ANNOTATIONS_DIR), &format!("{}.json", record.id), body.as_bytes())?;
        let revision = record.revision;
        self.index.write().unwrap().insert(record.id.clone(), record);
        Ok(revision)
    }

    /// PNG file names under `images/`, sorted.
    pub fn images(&self) -> Result<Vec<String>, StoreError> {
        let mut names: Vec<String> = fs::read_dir(self.root.join(IMAGES_DIR))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".png") && is_safe_id(n))
            .collect();
        names.sort();
        Ok(names)
    }

    fn image_path(&self, name: &str) -> Result<PathBuf, StoreError> {
        let path = self.root.join(IMAGES_DIR).join(name);
        if !is_safe_id(name) || !name.ends_with(".png") || !path.is_file() {
            return Err(StoreError::NotFound(format!("image `{name}`")));
        }
        Ok(path)
    }

    pub fn image_bytes(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        Ok(fs::read(self.image_path(name)?)?)
    }

    fn sidecar(&self, name: &str, suffix: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let stem = name.strip_suffix(".png").unwrap_or(name);
        match fs::read(self.root.join(IMAGES_DIR).join(format!("{stem}.{suffix}.json"))) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Cache file name for an image, its sidecars and the engine constants.
    pub fn feature_cache_key(&self, image: &[u8], path: Option<&[u8]>, lines: Option<&[u8]>) -> String {
        let mut h = Sha256::new();
        for part in [Some(image), path, lines] {
            match part {
                Some(bytes) => {
                    h.update((bytes.len() as u64).to_le_bytes());
                    h.update(bytes);
                }
                None => h.update(u64::MAX.to_le_bytes()),
            }
        }
        let constants = sha256_hex(self.constants.fingerprint().as_bytes());
        format!("{}-{}", hex::encode(h.finalize().as_slice()), &constants[..16])
    }

    /// Feature vector JSON for an image, computed once and then served from the
    /// cache. `<stem>.path.json` and `<stem>.lines.json` next to the image
    /// supply the optional path and line inputs.
    pub fn features_json(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let image = self.image_bytes(name)?;
        let path = self.sidecar(name, "path")?;
        let lines = self.sidecar(name, "lines")?;
        let key = self.feature_cache_key(&image, path.as_deref(), lines.as_deref());
        let cache_dir = self.root.join(FEATURES_DIR);
        let file = format!("{key}.json");
        if let Ok(hit) = fs::read(cache_dir.join(&file)) {
            return Ok(hit);
        }

        let raster = ImageRaster::from_png_bytes(&image)?;
        let path: Option<PathPolyline> = path
            .map(|b| serde_json::from_slice(&b).map_err(|e| StoreError::Sidecar(format!("{name} path"), e)))
            .transpose()?;
        let lines: Option<Vec<LineSegment>> = lines
            .map(|b| serde_json::from_slice(&b).map_err(|e| StoreError::Sidecar(format!("{name} lines"), e)))
            .transpose()?;
        let fv = extract_all(&raster, path.as_ref(), lines.as_deref(), &self.constants)?;
        let mut body = serde_json::to_vec(&fv).expect("feature vector serializes");
        body.push(b'\n');
        write_atomic(&cache_dir, &file, &body)?;
        Ok(body)
    }

    /// Kappa between two annotators over the images both have annotated.
    pub fn agreement(&self, annotator_a: &str, annotator_b: &str) -> Result<AgreementReport, StoreError> {
        let all = self.annotations();
        let pick = |who: &str| -> Vec<&Annotation> { all.iter().filter(|a| a.annotator_id == who).collect() };
        let (a, b) = (pick(annotator_a), pick(annotator_b));
        let in_b: BTreeSet<&str> = b.iter().map(|x| x.image_ref.as_str()).collect();
        let in_a: BTreeSet<&str> = a.iter().map(|x| x.image_ref.as_str()).collect();
        let corpus = |side: &[&Annotation], other: &BTreeSet<&str>| -> Result<Vec<Annotation>, StoreError> {
            side.iter()
                .filter(|x| other.contains(x.image_ref.as_str()))
                .map(|x| {
                    normalize_annotation(&self.schema, x).map_err(|e| {
                        StoreError::ValidationFailed(ValidationReport::from_findings([Finding::error(
                            "INVALID_ANNOTATION",
                            &x.id,
                            e.to_string(),
                        )]))
                    })
                })
                .collect()
        };
        let ca = corpus(&a, &in_b)?;
        let cb = corpus(&b, &in_a)?;
        Ok(cohen_kappa(&ca, &cb, None)?)
    }
}
