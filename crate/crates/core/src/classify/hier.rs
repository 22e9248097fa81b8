//! Two-level classification: group first, then the instruction inside it.

use serde::{Deserialize, Serialize};

use super::fixed::{quantize_input, quantize_model_scaled, FixedQda};
use super::qda::{train, Discriminant, Qda};
use crate::error::{Error, Result};
use crate::featsel::{FeatureSet, PcaProjection};
use crate::fuse::{Channel, CombineProfile};
use crate::leaksim::GroupTable;
use crate::tracekit::{DualTrace, Matrix, NormalizationStats};

/// Turns a normalized dual trace into the classifier input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    /// fuse with per-index coefficients, then keep the selected indices
    Selected {
        profile: CombineProfile,
        features: FeatureSet,
    },
    /// project one channel, or the power ‖ EM concatenation, onto principal components
    Pca { input: Channel, projection: PcaProjection },
}

impl Extractor {
    pub fn dim(&self) -> usize {
        match self {
            Extractor::Selected { features, .. } => features.len(),
            Extractor::Pca { projection, .. } => projection.k(),
        }
    }

    /// Feature vector of one normalized power/EM pair.
    pub fn extract(&self, power: &[f32], em: &[f32]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        match self {
            Extractor::Selected { profile, features } => {
                for &k in &features.indices {
                    let a = profile.alphas[k];
                    let z = (a * power[k] as f64 + (1.0 - a) * em[k] as f64) as f32;
                    out.push(z as f64);
                }
            }
            Extractor::Pca { input, projection } => {
                let src: &[&[f32]] = match input {
                    Channel::Power => &[power],
                    Channel::Em => &[em],
                    Channel::Fused => &[power, em],
                };
                projection.project_into(src.iter().flat_map(|s| s.iter().map(|&v| v as f64)), &mut out);
            }
        }
        out
    }

    /// Feature matrix of normalized power/EM matrices, one row per trace.
    pub fn extract_matrix(&self, power: &Matrix, em: &Matrix) -> Result<Matrix> {
        if power.rows() != em.rows() || power.cols() != em.cols() {
            return Err(Error::DimensionMismatch {
                expected: power.cols(),
                found: em.cols(),
            });
        }
        let rows = crate::par_map(power.rows(), |i| {
            self.extract(power.row(i), em.row(i))
                .into_iter()
                .map(|v| v as f32)
                .collect::<Vec<f32>>()
        });
        Matrix::from_rows(&rows)
    }
}

/// Inter-group classifier plus one within-group classifier per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierQda {
    pub inter: Qda,
    pub within: Vec<Qda>,
    /// global instruction index of each within-group class
    pub members: Vec<Vec<usize>>,
}

impl HierQda {
    /// Trains on a feature matrix labelled with global instruction indices.
    pub fn train(x: &Matrix, instr: &[usize], table: &GroupTable, kind: Discriminant) -> Result<Self> {
        if instr.len() != x.rows() {
            return Err(Error::LengthMismatch {
                left: instr.len(),
                right: x.rows(),
            });
        }
        let n_groups = table.n_groups();
        let mut rows_of = vec![vec![]; n_groups];
        for (i, &c) in instr.iter().enumerate() {
            table.check(c)?;
            rows_of[table.group_of(c)].push(i);
        }
        if let Some(g) = rows_of.iter().position(|r| r.is_empty()) {
            return Err(Error::MissingGroup(g));
        }
        let groups: Vec<usize> = instr.iter().map(|&c| table.group_of(c)).collect();
        let inter = train(kind, x, &groups, n_groups, None)?;
        let within = crate::par_map(n_groups, |g| {
            let rows = &rows_of[g];
            let sub = x.select_rows(rows);
            let labels: Vec<usize> = rows.iter().map(|&i| table.within_index(instr[i])).collect();
            train(kind, &sub, &labels, table.members(g).len(), None)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(HierQda {
            inter,
            within,
            members: (0..n_groups).map(|g| table.members(g).to_vec()).collect(),
        })
    }

    /// `(group, instruction)` of one feature vector.
    pub fn classify(&self, x: &[f64]) -> Result<(usize, usize)> {
        let g = self.inter.classify(x)?;
        let w = self.within[g].classify(x)?;
        Ok((g, self.members[g][w]))
    }

    /// Number of class discriminants evaluated for a decision landing in `group`.
    pub fn discriminants_evaluated(&self, group: usize) -> usize {
        self.inter.n_classes() + self.within[group].n_classes()
    }

    pub fn quantize(&self, q: u32) -> Result<FixedHier> {
        Ok(FixedHier {
            inter: quantize_model_scaled(&self.inter, q)?,
            within: self
                .within
                .iter()
                .map(|m| quantize_model_scaled(m, q))
                .collect::<Result<_>>()?,
            members: self.members.clone(),
        })
    }
}

/// Integer-only counterpart of [`HierQda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedHier {
    pub inter: FixedQda,
    pub within: Vec<FixedQda>,
    pub members: Vec<Vec<usize>>,
}

impl FixedHier {
    pub fn frac_bits(&self) -> u32 {
        self.inter.frac_bits
    }

    pub fn classify(&self, x: &[f64]) -> Result<(usize, usize)> {
        self.classify_quantized(&quantize_input(x, self.frac_bits()))
    }

    pub fn classify_quantized(&self, z: &[i32]) -> Result<(usize, usize)> {
        let g = super::fixed::bubble_argmax(&self.inter.scores_quantized(z)?)?;
        let w = super::fixed::bubble_argmax(&self.within[g].scores_quantized(z)?)?;
        Ok((g, self.members[g][w]))
    }
}

/// A deployable pipeline: normalization, fusion, feature extraction and the
/// two-level classifier, with an optional fixed-point twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierModel {
    pub table: GroupTable,
    pub norm: NormalizationStats,
    pub extractor: Extractor,
    pub classifier: HierQda,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedHier>,
}

impl HierModel {
    /// Feature vector of a raw dual trace.
    pub fn features(&self, dual: &DualTrace) -> Result<Vec<f64>> {
        let n = self.norm.normalize_dual(dual)?;
        Ok(self.extractor.extract(n.power().samples(), n.em().samples()))
    }

    pub fn classify(&self, dual: &DualTrace) -> Result<(usize, usize)> {
        self.classifier.classify(&self.features(dual)?)
    }

    /// Integer-path decision; fails if the model carries no fixed-point twin.
    pub fn classify_fixed(&self, dual: &DualTrace) -> Result<(usize, usize)> {
        let fixed = self
            .fixed
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no fixed-point part".into()))?;
        fixed.classify(&self.features(dual)?)
    }

    pub fn with_fixed(mut self, q: u32) -> Result<Self> {
        self.fixed = Some(self.classifier.quantize(q)?);
        Ok(self)
    }
}

/// Normalizes, extracts features and trains the two-level classifier.
pub fn train_hier(
    dataset: &crate::tracekit::LabeledDataset,
    table: &GroupTable,
    norm: NormalizationStats,
    extractor: Extractor,
    kind: Discriminant,
) -> Result<HierModel> {
    let (p, e) = crate::tracekit::normalize_dataset(dataset, &norm)?;
    let x = extractor.extract_matrix(&p, &e)?;
    let classifier = HierQda::train(&x, &dataset.instr_labels(), table, kind)?;
    Ok(HierModel {
        table: table.clone(),
        norm,
        extractor,
        classifier,
        fixed: None,
    })
}

pub fn hier_classify(model: &HierModel, dual: &DualTrace) -> Result<(usize, usize)> {
    model.classify(dual)
}

/// Single-level classifier over every instruction, for comparison.
pub fn train_flat(x: &Matrix, instr: &[usize], n_instr: usize, kind: Discriminant) -> Result<Qda> {
    train(kind, x, instr, n_instr, None)
}
