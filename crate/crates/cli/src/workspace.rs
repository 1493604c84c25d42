//! The annotation store: lexicon versions, rounds, the gold set and the
//! evaluation history, as flat JSON files under one directory.

use std::fs;
use std::path::{Path, PathBuf};

use pvcohort_core::annotation::{AnnotationRound, GoldSet, MatcherEvaluation};
use pvcohort_core::lexicon::{load_lexicon, LexiconVersion};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Pending,
    Done,
}

/// Matcher quality for one lexicon version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub lexicon_version: u64,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<MatcherEvaluation>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(p, &bytes)
}

impl Workspace {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn lexicon_dir(&self) -> PathBuf {
        self.root.join("lexicon")
    }

    fn rounds_dir(&self) -> PathBuf {
        self.root.join("rounds")
    }

    fn history_path(&self) -> PathBuf {
        self.root.join("eval_history.json")
    }

    pub fn gold_path(&self) -> PathBuf {
        self.root.join("gold.json")
    }

    fn numbered(dir: &Path, prefix: &str) -> Result<Vec<u64>> {
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let entry = entry.map_err(|e| CliError::io(dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name
                .strip_prefix(prefix)
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse().ok())
            {
                out.push(n);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn lexicon_versions(&self) -> Result<Vec<u64>> {
        Self::numbered(&self.lexicon_dir(), "v")
    }

    pub fn lexicon(&self, version: u64) -> Result<LexiconVersion> {
        let p = self.lexicon_dir().join(format!("v{version}.json"));
        load_lexicon(&p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }

    /// Latest stored version, or the seed file when none is stored.
    pub fn current_lexicon(&self, seed: &Path) -> Result<LexiconVersion> {
        match self.lexicon_versions()?.last() {
            Some(&v) => self.lexicon(v),
            None => load_lexicon(seed).map_err(|e| CliError::data(format!("{}: {e}", seed.display()))),
        }
    }

    pub fn save_lexicon(&self, lex: &LexiconVersion) -> Result<()> {
        let p = self.lexicon_dir().join(format!("v{}.json", lex.version()));
        if p.exists() {
            return Err(CliError::data(format!("lexicon version {} already stored", lex.version())));
        }
        let mut text = lex.to_json_pretty();
        text.push('\n');
        write_atomic(&p, text.as_bytes())
    }

    /// Stores the seed lexicon as the first version if the store is empty.
    pub fn init(&self, seed: &Path) -> Result<LexiconVersion> {
        fs::create_dir_all(self.rounds_dir()).map_err(|e| CliError::io(&self.root, e))?;
        if self.lexicon_versions()?.is_empty() {
            let lex = load_lexicon(seed).map_err(|e| CliError::data(format!("{}: {e}", seed.display())))?;
            self.save_lexicon(&lex)?;
        }
        self.current_lexicon(seed)
    }

    pub fn round_numbers(&self) -> Result<Vec<u64>> {
        Self::numbered(&self.rounds_dir(), "round-")
    }

    pub fn round(&self, n: u32) -> Result<Option<AnnotationRound>> {
        let p = self.rounds_dir().join(format!("round-{n}.json"));
        if !p.exists() {
            return Ok(None);
        }
        let r: AnnotationRound = read_json(&p)?;
        r.validate().map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        Ok(Some(r))
    }

    pub fn rounds(&self) -> Result<Vec<AnnotationRound>> {
        self.round_numbers()?
            .into_iter()
            .filter_map(|n| self.round(n as u32).transpose())
            .collect()
    }

    pub fn save_round(&self, r: &AnnotationRound) -> Result<()> {
        write_json(&self.rounds_dir().join(format!("round-{}.json", r.round)), r)
    }

    pub fn gold(&self, fallback: Option<&Path>) -> Result<Option<GoldSet>> {
        let p = self.gold_path();
        let path = if p.exists() { Some(p) } else { fallback.map(Path::to_path_buf) };
        match path {
            None => Ok(None),
            Some(p) => {
                let g: GoldSet = read_json(&p)?;
                g.validate().map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                Ok(Some(g))
            }
        }
    }

    pub fn save_gold(&self, g: &GoldSet) -> Result<()> {
        write_json(&self.gold_path(), g)
    }

    pub fn history(&self) -> Result<Vec<EvalPoint>> {
        let p = self.history_path();
        if !p.exists() {
            return Ok(Vec::new());
        }
        read_json(&p)
    }

    pub fn mark_pending(&self, version: u64) -> Result<()> {
        let mut h = self.history()?;
        if !h.iter().any(|p| p.lexicon_version == version) {
            h.push(EvalPoint {
                lexicon_version: version,
                status: EvalStatus::Pending,
                evaluation: None,
            });
            h.sort_by_key(|p| p.lexicon_version);
        }
        write_json(&self.history_path(), &h)
    }

    /// Fills the entry for `version`, adding it if absent.
    pub fn record_evaluation(&self, version: u64, evaluation: &MatcherEvaluation) -> Result<EvalPoint> {
        let mut h = self.history()?;
        let point = EvalPoint {
            lexicon_version: version,
            status: EvalStatus::Done,
            evaluation: Some(evaluation.clone()),
        };
        match h.iter_mut().find(|p| p.lexicon_version == version) {
            Some(p) => *p = point.clone(),
            None => {
                h.push(point.clone());
                h.sort_by_key(|p| p.lexicon_version);
            }
        }
        write_json(&self.history_path(), &h)?;
        Ok(point)
    }
}
