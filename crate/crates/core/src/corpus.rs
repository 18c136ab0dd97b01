//! Attribution dataset model, persistence and layout ingestion.
//!
//! A dataset directory holds two line-delimited JSON files next to each
//! other: `documents.jsonl` with one [`DocumentImage`] per line and
//! `examples.jsonl` with one [`AttributionExample`] per line. Image paths in
//! document records are resolved relative to that directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{page_category, BBox, ImageDims, PageLocation, DEFAULT_PAGE_HEIGHT};
use crate::textmatch::AnswerSet;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentImage {
    pub doc_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_page_height")]
    pub page_height: u32,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

fn default_page_height() -> u32 {
    DEFAULT_PAGE_HEIGHT
}

impl DocumentImage {
    pub fn dims(&self) -> ImageDims {
        ImageDims {
            width: self.width,
            height: self.height,
            page_height: self.page_height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PassageFirstPage,
    PassageBeyondFirstPage,
    Passage,
    NonPassage,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::PassageFirstPage => "passage_first_page",
            Category::PassageBeyondFirstPage => "passage_beyond_first_page",
            Category::Passage => "passage",
            Category::NonPassage => "non_passage",
        }
    }

    /// Column header used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            Category::PassageFirstPage => "[<1] Passage",
            Category::PassageBeyondFirstPage => "[>1] Passage",
            Category::Passage => "Passage",
            Category::NonPassage => "Non-Passage",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which category set a dataset is defined over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryScheme {
    /// Tall multi-page screenshots: first-page passage, later passage, non-passage.
    MultiPage,
    /// Single-page documents: passage, non-passage.
    SinglePage,
}

impl CategoryScheme {
    pub fn categories(&self) -> &'static [Category] {
        match self {
            CategoryScheme::MultiPage => &[
                Category::PassageFirstPage,
                Category::PassageBeyondFirstPage,
                Category::NonPassage,
            ],
            CategoryScheme::SinglePage => &[Category::Passage, Category::NonPassage],
        }
    }

    pub fn is_multi_page(&self) -> bool {
        matches!(self, CategoryScheme::MultiPage)
    }

    /// Picks the scheme implied by the categories present; defaults to multi-page.
    pub fn infer<'a>(categories: impl IntoIterator<Item = &'a Category>) -> Self {
        for c in categories {
            match c {
                Category::Passage => return CategoryScheme::SinglePage,
                Category::PassageFirstPage | Category::PassageBeyondFirstPage => {
                    return CategoryScheme::MultiPage
                }
                Category::NonPassage => {}
            }
        }
        CategoryScheme::MultiPage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionExample {
    pub example_id: String,
    pub query: String,
    pub answers: AnswerSet,
    pub gold_doc_id: String,
    pub gold_bbox: BBox,
    pub category: Category,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    Title,
    Text,
    List,
    Table,
    Figure,
}

impl ElementClass {
    pub const ALL: [ElementClass; 5] = [
        ElementClass::Title,
        ElementClass::Text,
        ElementClass::List,
        ElementClass::Table,
        ElementClass::Figure,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "title" => Some(ElementClass::Title),
            "text" | "paragraph" | "passage" => Some(ElementClass::Text),
            "list" => Some(ElementClass::List),
            "table" => Some(ElementClass::Table),
            "figure" | "image" => Some(ElementClass::Figure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub doc_id: String,
    pub element_bbox: BBox,
    pub element_class: ElementClass,
    /// Words inside the element, when the upstream annotator supplies it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_count: Option<u32>,
}

/// Only running text counts as a passage; lists, tables, figures and titles do not.
pub fn assign_category(
    class: ElementClass,
    bbox: &BBox,
    dims: &ImageDims,
    multi_page: bool,
) -> Category {
    match (class, multi_page) {
        (ElementClass::Text, true) => match page_category(bbox, dims) {
            PageLocation::FirstPage => Category::PassageFirstPage,
            PageLocation::BeyondFirstPage => Category::PassageBeyondFirstPage,
        },
        (ElementClass::Text, false) => Category::Passage,
        _ => Category::NonPassage,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IssueKind {
    MalformedJson(String),
    InvalidBox(String),
    BoxOutsideImage { bbox: BBox, width: u32, height: u32 },
    DuplicateId(String),
    UnknownDocument(String),
    MissingImage(PathBuf),
    UnreadableImage(PathBuf, String),
    ImageSizeMismatch { expected: (u32, u32), actual: (u32, u32) },
    EmptyAnswers,
    ZeroDimensions,
    CategoryMismatch { category: Category, location: PageLocation },
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueKind::MalformedJson(e) => write!(f, "malformed JSON: {e}"),
            IssueKind::InvalidBox(e) => write!(f, "invalid box: {e}"),
            IssueKind::BoxOutsideImage { bbox, width, height } => {
                write!(f, "box {bbox} lies outside the {width}x{height} image")
            }
            IssueKind::DuplicateId(id) => write!(f, "duplicate id {id:?}"),
            IssueKind::UnknownDocument(id) => write!(f, "unknown document {id:?}"),
            IssueKind::MissingImage(p) => write!(f, "missing image file {}", p.display()),
            IssueKind::UnreadableImage(p, e) => {
                write!(f, "cannot read image {}: {e}", p.display())
            }
            IssueKind::ImageSizeMismatch { expected, actual } => write!(
                f,
                "image is {}x{}, record says {}x{}",
                actual.0, actual.1, expected.0, expected.1
            ),
            IssueKind::EmptyAnswers => f.write_str("answers must be non-empty"),
            IssueKind::ZeroDimensions => f.write_str("width and height must be non-zero"),
            IssueKind::CategoryMismatch { category, location } => write!(
                f,
                "category {category} contradicts box location {location:?}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub file: PathBuf,
    /// 1-based line number.
    pub line: usize,
    pub kind: IssueKind,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file.display(), self.line, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} validation issue(s), first: {}", .0.len(), .0[0])]
    Validation(Vec<ValidationIssue>),
    #[error("layout file: {0}")]
    Layout(String),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn issues(&self) -> &[ValidationIssue] {
        match self {
            DatasetError::Validation(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Check that each image exists and has the recorded dimensions.
    pub verify_images: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            verify_images: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
    pub documents: BTreeMap<String, DocumentImage>,
    pub examples: Vec<AttributionExample>,
}

impl Dataset {
    pub fn document(&self, doc_id: &str) -> Option<&DocumentImage> {
        self.documents.get(doc_id)
    }

    pub fn image_path(&self, doc: &DocumentImage) -> PathBuf {
        if doc.image_path.is_absolute() {
            doc.image_path.clone()
        } else {
            self.root.join(&doc.image_path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &AttributionExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn scheme(&self) -> CategoryScheme {
        CategoryScheme::infer(self.examples.iter().map(|e| &e.category))
    }

    pub fn example(&self, example_id: &str) -> Option<&AttributionExample> {
        self.examples.iter().find(|e| e.example_id == example_id)
    }
}

#[derive(Deserialize)]
struct RawExample {
    example_id: String,
    query: String,
    answers: Vec<String>,
    gold_doc_id: String,
    gold_bbox: [[f64; 2]; 2],
    category: Category,
    split: Split,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DatasetError> {
    let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Loads `documents.jsonl` next to the given `examples.jsonl` manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    load_dataset_with(manifest_path, LoadOptions::default())
}

pub fn load_dataset_with(manifest_path: &Path, opts: LoadOptions) -> Result<Dataset, DatasetError> {
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let docs_path = root.join(DOCUMENTS_FILE);
    let mut issues = Vec::new();
    let mut ds = Dataset {
        root: root.clone(),
        ..Dataset::default()
    };

    if docs_path.exists() {
        for (line, text) in read_lines(&docs_path)? {
            let issue = |kind| ValidationIssue {
                file: docs_path.clone(),
                line,
                kind,
            };
            let doc: DocumentImage = match serde_json::from_str(&text) {
                Ok(d) => d,
                Err(e) => {
                    issues.push(issue(IssueKind::MalformedJson(e.to_string())));
                    continue;
                }
            };
            if doc.width == 0 || doc.height == 0 || doc.page_height == 0 {
                issues.push(issue(IssueKind::ZeroDimensions));
                continue;
            }
            if opts.verify_images {
                let path = ds.image_path(&doc);
                if !path.exists() {
                    issues.push(issue(IssueKind::MissingImage(path)));
                } else {
                    match image::image_dimensions(&path) {
                        Ok(actual) if actual != (doc.width, doc.height) => {
                            issues.push(issue(IssueKind::ImageSizeMismatch {
                                expected: (doc.width, doc.height),
                                actual,
                            }))
                        }
                        Ok(_) => {}
                        Err(e) => {
                            issues.push(issue(IssueKind::UnreadableImage(path, e.to_string())))
                        }
                    }
                }
            }
            if ds.documents.contains_key(&doc.doc_id) {
                issues.push(issue(IssueKind::DuplicateId(doc.doc_id)));
                continue;
            }
            ds.documents.insert(doc.doc_id.clone(), doc);
        }
    }

    let mut seen = HashSet::new();
    for (line, text) in read_lines(manifest_path)? {
        let issue = |kind| ValidationIssue {
            file: manifest_path.to_path_buf(),
            line,
            kind,
        };
        let raw: RawExample = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                issues.push(issue(IssueKind::MalformedJson(e.to_string())));
                continue;
            }
        };
        let [[x1, y1], [x2, y2]] = raw.gold_bbox;
        let bbox = match BBox::new(x1, y1, x2, y2) {
            Ok(b) => b,
            Err(e) => {
                issues.push(issue(IssueKind::InvalidBox(e.to_string())));
                continue;
            }
        };
        let Some(answers) = AnswerSet::new(raw.answers) else {
            issues.push(issue(IssueKind::EmptyAnswers));
            continue;
        };
        if !seen.insert(raw.example_id.clone()) {
            issues.push(issue(IssueKind::DuplicateId(raw.example_id)));
            continue;
        }
        match ds.documents.get(&raw.gold_doc_id) {
            None => {
                issues.push(issue(IssueKind::UnknownDocument(raw.gold_doc_id)));
                continue;
            }
            Some(doc) => {
                let dims = doc.dims();
                if !bbox.within(&dims) {
                    issues.push(issue(IssueKind::BoxOutsideImage {
                        bbox,
                        width: dims.width,
                        height: dims.height,
                    }));
                    continue;
                }
                let location = page_category(&bbox, &dims);
                let consistent = match raw.category {
                    Category::PassageFirstPage => location == PageLocation::FirstPage,
                    Category::PassageBeyondFirstPage => location == PageLocation::BeyondFirstPage,
                    _ => true,
                };
                if !consistent {
                    issues.push(issue(IssueKind::CategoryMismatch {
                        category: raw.category,
                        location,
                    }));
                    continue;
                }
            }
        }
        ds.examples.push(AttributionExample {
            example_id: raw.example_id,
            query: raw.query,
            answers,
            gold_doc_id: raw.gold_doc_id,
            gold_bbox: bbox,
            category: raw.category,
            split: raw.split,
        });
    }

    if issues.is_empty() {
        Ok(ds)
    } else {
        Err(DatasetError::Validation(issues))
    }
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads one JSON value per non-blank line, reporting the first bad line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        match serde_json::from_str(&text) {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(DatasetError::Validation(vec![ValidationIssue {
                    file: path.to_path_buf(),
                    line,
                    kind: IssueKind::MalformedJson(e.to_string()),
                }]))
            }
        }
    }
    Ok(out)
}

/// Writes `documents.jsonl` and `examples.jsonl` into `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    let docs = dir.join(DOCUMENTS_FILE);
    let examples = dir.join(EXAMPLES_FILE);
    write_jsonl(&docs, ds.documents.values()).map_err(|e| DatasetError::io(&docs, e))?;
    write_jsonl(&examples, &ds.examples).map_err(|e| DatasetError::io(&examples, e))?;
    Ok(examples)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub per_split: BTreeMap<Split, usize>,
    pub per_category: BTreeMap<Split, BTreeMap<Category, usize>>,
}

impl DatasetStats {
    pub fn count(&self, split: Split) -> usize {
        self.per_split.get(&split).copied().unwrap_or(0)
    }

    pub fn to_table(&self) -> String {
        let mut cats: Vec<Category> = self
            .per_category
            .values()
            .flat_map(|m| m.keys().copied())
            .collect();
        cats.sort();
        cats.dedup();
        let mut out = format!("{:<28}{:>10}{:>10}\n", "", "# Train", "# Test");
        let row = |label: &str, train: usize, test: usize| {
            format!("{label:<28}{train:>10}{test:>10}\n")
        };
        let cell = |s: Split, c: Category| {
            self.per_category
                .get(&s)
                .and_then(|m| m.get(&c))
                .copied()
                .unwrap_or(0)
        };
        for c in cats {
            out.push_str(&row(c.as_str(), cell(Split::Train, c), cell(Split::Test, c)));
        }
        out.push_str(&row("total", self.count(Split::Train), self.count(Split::Test)));
        out
    }
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut stats = DatasetStats {
        total: ds.examples.len(),
        ..Default::default()
    };
    for s in [Split::Train, Split::Test] {
        stats.per_split.insert(s, 0);
    }
    for ex in &ds.examples {
        *stats.per_split.entry(ex.split).or_default() += 1;
        *stats
            .per_category
            .entry(ex.split)
            .or_default()
            .entry(ex.category)
            .or_default() += 1;
    }
    stats
}

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    word_count: Option<u32>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Documents and element boxes from an object-detection annotation file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CocoLayout {
    pub documents: Vec<DocumentImage>,
    pub records: Vec<LayoutRecord>,
}

/// Parses an images/annotations/categories file with `[x, y, w, h]` boxes.
///
/// Document ids are image file stems; `page_height` is applied to every image.
pub fn parse_coco(json: &str, page_height: u32) -> Result<CocoLayout, DatasetError> {
    let coco: CocoFile =
        serde_json::from_str(json).map_err(|e| DatasetError::Layout(e.to_string()))?;

    let mut classes = HashMap::new();
    for c in &coco.categories {
        if let Some(class) = ElementClass::from_name(&c.name) {
            classes.insert(c.id, class);
        }
    }

    let mut images = HashMap::new();
    let mut documents = Vec::with_capacity(coco.images.len());
    for img in &coco.images {
        let path = PathBuf::from(&img.file_name);
        let doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| img.file_name.clone());
        let doc = DocumentImage {
            doc_id,
            width: img.width,
            height: img.height,
            page_height,
            image_path: path,
            source_url: None,
        };
        images.insert(img.id, documents.len());
        documents.push(doc);
    }

    let mut records = Vec::with_capacity(coco.annotations.len());
    for (i, ann) in coco.annotations.iter().enumerate() {
        let label = ann.id.map_or_else(|| format!("#{i}"), |id| id.to_string());
        let class = *classes.get(&ann.category_id).ok_or_else(|| {
            DatasetError::Layout(format!(
                "annotation {label}: unknown category id {}",
                ann.category_id
            ))
        })?;
        let doc = images
            .get(&ann.image_id)
            .map(|&idx| &documents[idx])
            .ok_or_else(|| {
                DatasetError::Layout(format!(
                    "annotation {label}: references missing image {}",
                    ann.image_id
                ))
            })?;
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::new(x, y, x + w, y + h)
            .map_err(|e| DatasetError::Layout(format!("annotation {label}: {e}")))?;
        if !bbox.within(&doc.dims()) {
            return Err(DatasetError::Layout(format!(
                "annotation {label}: box {bbox} outside {}x{} image",
                doc.width, doc.height
            )));
        }
        records.push(LayoutRecord {
            doc_id: doc.doc_id.clone(),
            element_bbox: bbox,
            element_class: class,
            word_count: ann.word_count,
        });
    }
    Ok(CocoLayout { documents, records })
}

pub fn ingest_layout(path: &Path) -> Result<Vec<LayoutRecord>, DatasetError> {
    Ok(ingest_coco(path, DEFAULT_PAGE_HEIGHT)?.records)
}

pub fn ingest_coco(path: &Path, page_height: u32) -> Result<CocoLayout, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_coco(&text, page_height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::clip;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn write_png(path: &Path, w: u32, h: u32) {
        image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]))
            .save(path)
            .unwrap();
    }

    fn doc_line(id: &str, w: u32, h: u32) -> String {
        format!(r#"{{"doc_id":"{id}","width":{w},"height":{h},"page_height":980,"image_path":"{id}.png"}}"#)
    }

    fn example_line(id: &str, doc: &str, bbox: &str, cat: &str, split: &str) -> String {
        format!(
            r#"{{"example_id":"{id}","query":"q?","answers":["a"],"gold_doc_id":"{doc}","gold_bbox":{bbox},"category":"{cat}","split":"{split}"}}"#
        )
    }

    fn fixture(docs: &[String], examples: &[String]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(DOCUMENTS_FILE), docs.join("\n")).unwrap();
        fs::write(dir.path().join(EXAMPLES_FILE), examples.join("\n")).unwrap();
        write_png(&dir.path().join("d1.png"), 100, 2000);
        dir
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(EXAMPLES_FILE);
        fs::write(&p, "").unwrap();
        let ds = load_dataset(&p).unwrap();
        assert!(ds.examples.is_empty());
        assert_eq!(dataset_stats(&ds).total, 0);
    }

    #[test]
    fn one_valid_record() {
        let dir = fixture(
            &[doc_line("d1", 100, 2000)],
            &[example_line("e1", "d1", "[[0,0],[10,10]]", "passage_first_page", "test")],
        );
        let ds = load_dataset(&dir.path().join(EXAMPLES_FILE)).unwrap();
        assert_eq!(ds.examples.len(), 1);
        let ex = &ds.examples[0];
        let dims = ds.document("d1").unwrap().dims();
        assert_eq!(clip(ex.gold_bbox.as_rect(), &dims).unwrap(), ex.gold_bbox);
    }

    #[test]
    fn invalid_box_names_line() {
        let dir = fixture(
            &[doc_line("d1", 100, 2000)],
            &[
                example_line("e1", "d1", "[[0,0],[10,10]]", "non_passage", "test"),
                example_line("e2", "d1", "[[10,0],[5,10]]", "non_passage", "test"),
            ],
        );
        let err = load_dataset(&dir.path().join(EXAMPLES_FILE)).unwrap_err();
        let issues = err.issues();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].line, 2);
        assert!(matches!(issues[0].kind, IssueKind::InvalidBox(_)));
    }

    #[test]
    fn all_problems_reported() {
        let dir = fixture(
            &[doc_line("d1", 100, 2000), doc_line("d2", 50, 50), "{not json".into()],
            &[
                example_line("e1", "d1", "[[0,0],[200,10]]", "non_passage", "test"),
                example_line("e2", "nope", "[[0,0],[5,10]]", "non_passage", "test"),
                example_line("e3", "d1", "[[0,1000],[5,1010]]", "passage_first_page", "test"),
                example_line("e4", "d1", "[[0,0],[5,10]]", "non_passage", "test"),
                example_line("e4", "d1", "[[0,0],[5,10]]", "non_passage", "test"),
            ],
        );
        let err = load_dataset(&dir.path().join(EXAMPLES_FILE)).unwrap_err();
        let kinds: Vec<_> = err.issues().iter().map(|i| (i.line, &i.kind)).collect();
        assert!(kinds.iter().any(|(l, k)| *l == 2 && matches!(k, IssueKind::MissingImage(_))));
        assert!(kinds.iter().any(|(l, k)| *l == 3 && matches!(k, IssueKind::MalformedJson(_))));
        assert!(kinds.iter().any(|(l, k)| *l == 1 && matches!(k, IssueKind::BoxOutsideImage { .. })));
        assert!(kinds.iter().any(|(_, k)| matches!(k, IssueKind::UnknownDocument(_))));
        assert!(kinds.iter().any(|(_, k)| matches!(k, IssueKind::CategoryMismatch { .. })));
        assert!(kinds.iter().any(|(l, k)| *l == 5 && matches!(k, IssueKind::DuplicateId(_))));
    }

    #[test]
    fn image_size_checked() {
        let dir = fixture(&[doc_line("d1", 100, 100)], &[]);
        let err = load_dataset(&dir.path().join(EXAMPLES_FILE)).unwrap_err();
        assert!(matches!(err.issues()[0].kind, IssueKind::ImageSizeMismatch { .. }));
        let ok = load_dataset_with(
            &dir.path().join(EXAMPLES_FILE),
            LoadOptions { verify_images: false },
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = fixture(
            &[doc_line("d1", 100, 2000)],
            &[
                example_line("e1", "d1", "[[0,0],[10,10]]", "passage_first_page", "test"),
                example_line("e2", "d1", "[[1.5,990],[10,1200]]", "passage_beyond_first_page", "train"),
            ],
        );
        let ds = load_dataset(&dir.path().join(EXAMPLES_FILE)).unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(&manifest).unwrap(), ds);
    }

    #[test]
    fn categories() {
        let d = ImageDims::new(980, 3920);
        let top = bb(0.0, 100.0, 10.0, 200.0);
        assert_eq!(assign_category(ElementClass::Text, &top, &d, true), Category::PassageFirstPage);
        let low = bb(0.0, 1500.0, 10.0, 1600.0);
        assert_eq!(
            assign_category(ElementClass::Text, &low, &d, true),
            Category::PassageBeyondFirstPage
        );
        for multi in [true, false] {
            for class in [ElementClass::Table, ElementClass::Figure, ElementClass::List, ElementClass::Title] {
                assert_eq!(assign_category(class, &low, &d, multi), Category::NonPassage);
            }
        }
        assert_eq!(assign_category(ElementClass::Text, &low, &d, false), Category::Passage);
    }

    #[test]
    fn stats_counts() {
        let mk = |id: &str, split| AttributionExample {
            example_id: id.into(),
            query: "q".into(),
            answers: AnswerSet::single("a").unwrap(),
            gold_doc_id: "d".into(),
            gold_bbox: bb(0.0, 0.0, 1.0, 1.0),
            category: Category::Passage,
            split,
        };
        let ds = Dataset {
            examples: vec![
                mk("1", Split::Train),
                mk("2", Split::Train),
                mk("3", Split::Train),
                mk("4", Split::Test),
                mk("5", Split::Test),
            ],
            ..Default::default()
        };
        let s = dataset_stats(&ds);
        assert_eq!((s.count(Split::Train), s.count(Split::Test)), (3, 2));
        assert_eq!(s.per_split.values().sum::<usize>(), s.total);
        let empty = dataset_stats(&Dataset::default());
        assert_eq!((empty.count(Split::Train), empty.count(Split::Test), empty.total), (0, 0, 0));
    }

    const COCO: &str = r#"{
        "images": [{"id": 7, "file_name": "PMC1_00.jpg", "width": 612, "height": 792}],
        "annotations": [
            {"id": 1, "image_id": 7, "category_id": 1, "bbox": [10, 20, 30, 40]},
            {"id": 2, "image_id": 7, "category_id": 4, "bbox": [50, 60, 100, 100], "word_count": 3}
        ],
        "categories": [
            {"id": 1, "name": "text"}, {"id": 2, "name": "title"}, {"id": 3, "name": "list"},
            {"id": 4, "name": "table"}, {"id": 5, "name": "figure"}
        ]
    }"#;

    #[test]
    fn coco_corner_conversion() {
        let layout = parse_coco(COCO, 792).unwrap();
        assert_eq!(layout.documents.len(), 1);
        assert_eq!(layout.documents[0].doc_id, "PMC1_00");
        assert_eq!(layout.records[0].element_bbox, bb(10.0, 20.0, 40.0, 60.0));
        assert_eq!(layout.records[0].element_class, ElementClass::Text);
        assert_eq!(layout.records[1].element_class, ElementClass::Table);
        assert_eq!(layout.records[1].word_count, Some(3));
    }

    #[test]
    fn coco_errors() {
        let empty = r#"{"images": [], "annotations": [], "categories": []}"#;
        assert!(parse_coco(empty, 980).unwrap().records.is_empty());

        let zero_w = COCO.replace("[10, 20, 30, 40]", "[10, 20, 0, 40]");
        assert!(parse_coco(&zero_w, 980).is_err());

        let bad_cat = COCO.replace(r#""category_id": 4"#, r#""category_id": 9"#);
        let err = parse_coco(&bad_cat, 980).unwrap_err().to_string();
        assert!(err.contains("unknown category id 9"), "{err}");

        let bad_img = COCO.replace(r#""image_id": 7, "category_id": 1"#, r#""image_id": 8, "category_id": 1"#);
        let err = parse_coco(&bad_img, 980).unwrap_err().to_string();
        assert!(err.contains("missing image 8"), "{err}");
    }
}
