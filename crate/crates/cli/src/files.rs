//! Text formats for SCMs and skeletons.
//!
//! An SCM file lists domain sizes in the order C, X, F, Y and one
//! probability row per parent assignment:
//!
//! ```toml
//! sizes = [2, 2, 2, 2]
//! prior = [0.4, 0.6]                  # P(C)
//! cpt_x = [[0.9, 0.1], [0.2, 0.8]]    # P(X | C), row c
//! cpt_f = [[0.7, 0.3], [0.1, 0.9]]    # P(F | X), row x
//! cpt_y = [[0.6, 0.4], [0.3, 0.7],    # P(Y | C, F), row c * |F| + f
//!          [0.5, 0.5], [0.2, 0.8]]
//! ```
//!
//! A skeleton file names the keypoints, the physical edges and the
//! hyperedge groups:
//!
//! ```toml
//! names = ["head", "neck", "hand"]
//! edges = [[0, 1], [1, 2]]
//!
//! [[hyperedges]]
//! name = "upper"
//! members = [0, 1, 2]
//! ```

use std::path::Path;

use deconf_core::causal::{DiscreteScm, ScmTables};
use deconf_core::skeleton::{Hyperedge, SkeletonSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmFile {
    pub sizes: [usize; 4],
    pub prior: Vec<f64>,
    pub cpt_x: Vec<Vec<f64>>,
    pub cpt_f: Vec<Vec<f64>>,
    pub cpt_y: Vec<Vec<f64>>,
}

impl ScmFile {
    pub fn from_scm(scm: &DiscreteScm) -> Self {
        let t = scm.tables();
        Self {
            sizes: scm.sizes(),
            prior: t.prior,
            cpt_x: t.cpt_x,
            cpt_f: t.cpt_f,
            cpt_y: t.cpt_y,
        }
    }

    pub fn to_scm(&self) -> Result<DiscreteScm, CliError> {
        let tables = ScmTables {
            prior: self.prior.clone(),
            cpt_x: self.cpt_x.clone(),
            cpt_f: self.cpt_f.clone(),
            cpt_y: self.cpt_y.clone(),
        };
        DiscreteScm::new(self.sizes, tables).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn parse_scm(text: &str) -> Result<DiscreteScm, CliError> {
    let f: ScmFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    f.to_scm()
}

pub fn load_scm(path: &Path) -> Result<DiscreteScm, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_scm(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn scm_to_toml(scm: &DiscreteScm) -> String {
    toml::to_string(&ScmFile::from_scm(scm)).expect("scm serialises")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperedgeFile {
    pub name: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub names: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub hyperedges: Vec<HyperedgeFile>,
}

impl From<&SkeletonSpec> for SkeletonFile {
    fn from(s: &SkeletonSpec) -> Self {
        Self {
            names: s.names().to_vec(),
            edges: s.edges().iter().map(|&(a, b)| [a, b]).collect(),
            hyperedges: s
                .hyperedges()
                .iter()
                .map(|h| HyperedgeFile {
                    name: h.name.clone(),
                    members: h.members.clone(),
                })
                .collect(),
        }
    }
}

impl SkeletonFile {
    pub fn to_spec(&self) -> Result<SkeletonSpec, CliError> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let hyper = self
            .hyperedges
            .iter()
            .map(|h| Hyperedge::new(&h.name, &h.members))
            .collect();
        SkeletonSpec::new(self.names.clone(), &edges, hyper).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn parse_skeleton(text: &str) -> Result<SkeletonSpec, CliError> {
    let f: SkeletonFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    f.to_spec()
}

pub fn load_skeleton(path: &Path) -> Result<SkeletonSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_skeleton(&text)
}

pub fn skeleton_to_toml(spec: &SkeletonSpec) -> String {
    toml::to_string(&SkeletonFile::from(spec)).expect("skeleton serialises")
}
