use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// The 75-type table, one row per base label:
/// `label<TAB>name<TAB>group<TAB>extensions`.
pub const TAXONOMY_TABLE: &str = include_str!("../../data/fft75.tsv");

pub const BASE_TYPES: usize = 75;

/// Coarse family of a base file type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Bitmap,
    Raw,
    Vector,
    Video,
    Archive,
    Executable,
    Office,
    Published,
    HumanReadable,
    Audio,
    Other,
}

impl Group {
    /// Class order of the grouped scenario.
    pub const ALL: [Group; 11] = [
        Group::Bitmap,
        Group::Raw,
        Group::Vector,
        Group::Video,
        Group::Archive,
        Group::Executable,
        Group::Office,
        Group::Published,
        Group::HumanReadable,
        Group::Audio,
        Group::Other,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Group::Bitmap => "Bitmaps",
            Group::Raw => "RAW",
            Group::Vector => "Vector",
            Group::Video => "Video",
            Group::Archive => "Archives",
            Group::Executable => "Executables",
            Group::Office => "Office",
            Group::Published => "Published",
            Group::HumanReadable => "Human readable",
            Group::Audio => "Audio",
            Group::Other => "Other",
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bitmap" => Group::Bitmap,
            "raw" => Group::Raw,
            "vector" => Group::Vector,
            "video" => Group::Video,
            "archive" => Group::Archive,
            "executable" => Group::Executable,
            "office" => Group::Office,
            "published" => Group::Published,
            "human_readable" => Group::HumanReadable,
            "audio" => Group::Audio,
            "other" => Group::Other,
            other => return Err(Error::format("taxonomy table", format!("unknown group `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileType {
    pub label: usize,
    pub name: String,
    pub group: Group,
    pub extensions: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    types: Vec<FileType>,
}

impl Taxonomy {
    pub fn parse(text: &str) -> Result<Self> {
        let mut types = Vec::new();
        for line in text.lines() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::format("taxonomy table", format!("bad row `{line}`")));
            }
            let label: usize = cols[0]
                .parse()
                .map_err(|_| Error::format("taxonomy table", format!("bad label in `{line}`")))?;
            if label != types.len() {
                return Err(Error::format("taxonomy table", "labels must be 0, 1, 2, ... in order"));
            }
            types.push(FileType {
                label,
                name: cols[1].to_string(),
                group: cols[2].parse()?,
                extensions: cols[3].split(',').map(|e| e.trim().to_ascii_lowercase()).collect(),
            });
        }
        Ok(Taxonomy { types })
    }

    /// The shipped 75-type table.
    pub fn builtin() -> &'static Taxonomy {
        static TABLE: OnceLock<Taxonomy> = OnceLock::new();
        TABLE.get_or_init(|| Taxonomy::parse(TAXONOMY_TABLE).expect("shipped taxonomy table parses"))
    }

    pub fn types(&self) -> &[FileType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, label: usize) -> Option<&FileType> {
        self.types.get(label)
    }

    pub fn by_name(&self, name: &str) -> Option<&FileType> {
        self.types.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Base label for a file extension (case-insensitive, without the dot).
    pub fn by_extension(&self, ext: &str) -> Option<&FileType> {
        let ext = ext.to_ascii_lowercase();
        self.types.iter().find(|t| t.extensions.contains(&ext))
    }

    pub fn jpeg(&self) -> usize {
        self.by_name("JPG").expect("taxonomy has JPEG").label
    }
}

/// One of the six class groupings over the base types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Every base type is its own class.
    All = 1,
    /// One class per group.
    Grouped = 2,
    /// Bitmap, RAW and video types individually; everything else as one class.
    Photographic = 3,
    /// JPEG, RAW, video, other bitmaps, everything else.
    CameraFamilies = 4,
    /// JPEG against everything else.
    JpegVsOther = 5,
    /// JPEG against other camera output; unrelated types are excluded.
    JpegVsCamera = 6,
}

/// Types from other camera pipelines that form the negative class of
/// [`Scenario::JpegVsCamera`] together with every RAW format.
const CAMERA_NEGATIVES: [&str; 5] = ["3GP", "MOV", "MKV", "TIFF", "HEIC"];

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::All,
        Scenario::Grouped,
        Scenario::Photographic,
        Scenario::CameraFamilies,
        Scenario::JpegVsOther,
        Scenario::JpegVsCamera,
    ];

    pub fn from_id(id: u8) -> Result<Scenario> {
        Scenario::ALL
            .get((id as usize).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Usage(format!("scenario must be in 1..=6, got {id}")))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Class names in class-index order.
    pub fn class_names(self) -> Vec<String> {
        let tax = Taxonomy::builtin();
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            Scenario::All => tax.types().iter().map(|t| t.name.clone()).collect(),
            Scenario::Grouped => Group::ALL.iter().map(|g| g.display_name().to_string()).collect(),
            Scenario::Photographic => {
                let mut v: Vec<String> = tax
                    .types()
                    .iter()
                    .filter(|t| is_photographic(t.group))
                    .map(|t| t.name.clone())
                    .collect();
                v.push("Other".into());
                v
            }
            Scenario::CameraFamilies => names(&["JPEG", "RAW", "Video", "Bitmap", "Other"]),
            Scenario::JpegVsOther | Scenario::JpegVsCamera => names(&["JPEG", "Other"]),
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    /// Class index of a base label, or `None` when the scenario excludes it.
    pub fn map(self, base_label: usize) -> Option<usize> {
        let tax = Taxonomy::builtin();
        let t = tax.get(base_label)?;
        let is_jpeg = t.label == tax.jpeg();
        match self {
            Scenario::All => Some(base_label),
            Scenario::Grouped => Group::ALL.iter().position(|&g| g == t.group),
            Scenario::Photographic => {
                let individual: Vec<usize> = tax
                    .types()
                    .iter()
                    .filter(|t| is_photographic(t.group))
                    .map(|t| t.label)
                    .collect();
                Some(
                    individual
                        .iter()
                        .position(|&l| l == base_label)
                        .unwrap_or(individual.len()),
                )
            }
            Scenario::CameraFamilies => Some(match t.group {
                _ if is_jpeg => 0,
                Group::Raw => 1,
                Group::Video => 2,
                Group::Bitmap => 3,
                _ => 4,
            }),
            Scenario::JpegVsOther => Some(if is_jpeg { 0 } else { 1 }),
            Scenario::JpegVsCamera => {
                if is_jpeg {
                    Some(0)
                } else if t.group == Group::Raw || CAMERA_NEGATIVES.contains(&t.name.as_str()) {
                    Some(1)
                } else {
                    None
                }
            }
        }
    }

    /// Class index of JPEG when JPEG forms its own class.
    pub fn jpeg_class(self) -> Option<usize> {
        let tax = Taxonomy::builtin();
        let jpeg = tax.jpeg();
        let class = self.map(jpeg)?;
        let alone = (0..tax.len()).filter(|&l| self.map(l) == Some(class)).count() == 1;
        alone.then_some(class)
    }
}

fn is_photographic(g: Group) -> bool {
    matches!(g, Group::Bitmap | Group::Raw | Group::Video)
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.id())
    }
}

/// Class index of `base_label` under `scenario`, or `None` if excluded.
pub fn apply_scenario(base_label: usize, scenario: Scenario) -> Option<usize> {
    scenario.map(base_label)
}
