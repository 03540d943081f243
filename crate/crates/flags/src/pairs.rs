//! Positive-pair mining: within-class cosine-similarity ranking, top-2
//! global pair, mid-list local pair. Mining is offline; the manifest is
//! built once and looked up by query id during training.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::error::{FlagsError, Result};
use crate::model::{encode, EncoderParams};
use crate::numeric::NORM_EPSILON;

pub const FEATURES_SCHEMA_VERSION: &str = "flags-features-v1";
pub const MANIFEST_SCHEMA_VERSION: &str = "flags-manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sample_id: usize,
    pub class_id: usize,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub version: String,
    pub d_feat: usize,
    /// Which encoder produced these features (checkpoint path or "bootstrap").
    pub provenance: String,
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub class: usize,
    pub global: [usize; 2],
    pub local: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PairManifest {
    pub fn get(&self, id: usize) -> Result<&ManifestEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .map(|i| &self.entries[i])
            .map_err(|_| FlagsError::Integrity(format!("manifest has no entry for query {id}")))
    }
}

/// Run every sample through the encoder, no gradient recording.
pub fn compute_features(
    encoder: &EncoderParams,
    dataset: &SyntheticDataset,
    provenance: &str,
) -> Result<FeatureTable> {
    if encoder.input_dim() != dataset.input_dim() {
        return Err(FlagsError::Config(format!(
            "encoder input dim {} does not match dataset input dim {}",
            encoder.input_dim(),
            dataset.input_dim()
        )));
    }
    let rows = dataset
        .samples
        .iter()
        .map(|s| {
            Ok(FeatureRow {
                sample_id: s.id,
                class_id: s.class,
                feature: encode(encoder, &s.x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable {
        version: FEATURES_SCHEMA_VERSION.to_string(),
        d_feat: encoder.feature_dim(),
        provenance: provenance.to_string(),
        rows,
    })
}

fn feature_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// All same-class samples ranked by cosine similarity to the query,
/// descending, query excluded, ties broken by ascending sample_id.
pub fn rank_within_class(table: &FeatureTable, query_id: usize) -> Result<Vec<(usize, f64)>> {
    let query = table
        .rows
        .iter()
        .find(|r| r.sample_id == query_id)
        .ok_or_else(|| FlagsError::Integrity(format!("query id {query_id} not in feature table")))?;
    let qnorm = feature_norm(&query.feature);
    if qnorm <= NORM_EPSILON {
        return Err(FlagsError::Degenerate(format!(
            "query sample {query_id} has zero-norm feature"
        )));
    }
    let mut ranked = Vec::new();
    for row in &table.rows {
        if row.sample_id == query_id || row.class_id != query.class_id {
            continue;
        }
        let rnorm = feature_norm(&row.feature);
        if rnorm <= NORM_EPSILON {
            return Err(FlagsError::Degenerate(format!(
                "sample {} has zero-norm feature",
                row.sample_id
            )));
        }
        let dot: f64 = query.feature.iter().zip(&row.feature).map(|(a, b)| a * b).sum();
        ranked.push((row.sample_id, dot / (qnorm * rnorm)));
    }
    if ranked.is_empty() {
        return Err(FlagsError::ClassSize(format!(
            "class {} has no members besides query {query_id}",
            query.class_id
        )));
    }
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite similarities")
            .then(a.0.cmp(&b.0))
    });
    Ok(ranked)
}

/// Top-2 entries form the global pair; the two entries straddling the
/// median position form the local pair. mid = floor((n - 2) / 2) on the
/// 0-indexed ranked list; if that collides with the top-2 slots the local
/// pair falls back to ranks 2 and 3.
pub fn select_pairs(ranked: &[(usize, f64)]) -> Result<([usize; 2], [usize; 2])> {
    let n = ranked.len();
    if n < 4 {
        return Err(FlagsError::ClassSize(format!(
            "ranked list has {n} entries, need at least 4 to mine pairs"
        )));
    }
    let global = [ranked[0].0, ranked[1].0];
    let mid = (n - 2) / 2;
    let local = if mid < 2 {
        [ranked[2].0, ranked[3].0]
    } else {
        [ranked[mid].0, ranked[mid + 1].0]
    };
    Ok((global, local))
}

/// One manifest entry per sample. Any undersized class fails the whole
/// build; partial manifests are never produced.
pub fn build_manifest(table: &FeatureTable) -> Result<PairManifest> {
    let mut entries = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let ranked = rank_within_class(table, row.sample_id).map_err(|e| match e {
            FlagsError::ClassSize(m) => FlagsError::ClassSize(m),
            other => other,
        })?;
        if ranked.len() < 4 {
            return Err(FlagsError::ClassSize(format!(
                "class {} has only {} members besides query {}; need at least 4",
                row.class_id,
                ranked.len(),
                row.sample_id
            )));
        }
        let (global, local) = select_pairs(&ranked)?;
        entries.push(ManifestEntry {
            id: row.sample_id,
            class: row.class_id,
            global,
            local,
        });
    }
    entries.sort_by_key(|e| e.id);
    Ok(PairManifest { entries })
}

/// JSON lines: a schema header line, then one object per query.
pub fn write_manifest(manifest: &PairManifest, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", serde_json::json!({ "schema": MANIFEST_SCHEMA_VERSION }))?;
    for e in &manifest.entries {
        writeln!(out, "{}", serde_json::to_string(e)?)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<PairManifest> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| FlagsError::Integrity("empty manifest file".into()))??;
    let hv: serde_json::Value = serde_json::from_str(&header)?;
    if hv.get("schema").and_then(|s| s.as_str()) != Some(MANIFEST_SCHEMA_VERSION) {
        return Err(FlagsError::Integrity(format!(
            "unexpected manifest schema header: {header}"
        )));
    }
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(PairManifest { entries })
}

pub fn write_features(table: &FeatureTable, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(table)?)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let table: FeatureTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if table.version != FEATURES_SCHEMA_VERSION {
        return Err(FlagsError::Integrity(format!(
            "unexpected feature table version {}",
            table.version
        )));
    }
    Ok(table)
}

/// Referential-integrity check: all ids resolve, classes match, no
/// self-pairs, and no global/local overlap.
pub fn validate_manifest(manifest: &PairManifest, dataset: &SyntheticDataset) -> Result<()> {
    for e in &manifest.entries {
        let query = dataset.sample(e.id)?;
        if query.class != e.class {
            return Err(FlagsError::Integrity(format!(
                "manifest entry {} records class {} but dataset says {}",
                e.id, e.class, query.class
            )));
        }
        for &id in e.global.iter().chain(e.local.iter()) {
            if id == e.id {
                return Err(FlagsError::Integrity(format!("query {} paired with itself", e.id)));
            }
            let s = dataset.sample(id)?;
            if s.class != e.class {
                return Err(FlagsError::Integrity(format!(
                    "pair {} of query {} is class {}, expected {}",
                    id, e.id, s.class, e.class
                )));
            }
        }
        if e.global.iter().any(|g| e.local.contains(g)) {
            return Err(FlagsError::Integrity(format!(
                "query {} has overlapping global and local pairs",
                e.id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, DataConfig};
    use crate::model::init_model;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_from(features: Vec<(usize, usize, Vec<f64>)>) -> FeatureTable {
        let d = features.first().map(|f| f.2.len()).unwrap_or(0);
        FeatureTable {
            version: FEATURES_SCHEMA_VERSION.into(),
            d_feat: d,
            provenance: "test".into(),
            rows: features
                .into_iter()
                .map(|(sample_id, class_id, feature)| FeatureRow { sample_id, class_id, feature })
                .collect(),
        }
    }

    /// Quadratic brute-force ranking oracle: compute every similarity, then
    /// repeatedly extract the best (max similarity, min id) candidate.
    fn brute_force_rank(table: &FeatureTable, query_id: usize) -> Vec<(usize, f64)> {
        let q = table.rows.iter().find(|r| r.sample_id == query_id).unwrap();
        let mut pool: Vec<(usize, f64)> = table
            .rows
            .iter()
            .filter(|r| r.sample_id != query_id && r.class_id == q.class_id)
            .map(|r| {
                (
                    r.sample_id,
                    crate::numeric::cosine_similarity(&q.feature, &r.feature).unwrap(),
                )
            })
            .collect();
        let mut out = Vec::new();
        while !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                let better = pool[i].1 > pool[best].1
                    || (pool[i].1 == pool[best].1 && pool[i].0 < pool[best].0);
                if better {
                    best = i;
                }
            }
            out.push(pool.remove(best));
        }
        out
    }

    #[test]
    fn class_of_two_gives_single_entry() {
        let t = table_from(vec![
            (0, 0, vec![1.0, 0.0]),
            (1, 0, vec![0.5, 0.5]),
            (2, 1, vec![0.0, 1.0]),
        ]);
        let ranked = rank_within_class(&t, 0).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0, 1);
    }

    #[test]
    fn orthogonal_construction_orders_by_similarity() {
        let t = table_from(vec![
            (0, 0, vec![1.0, 0.0]),
            (1, 0, vec![1.0, 0.0]),
            (2, 0, vec![0.0, 1.0]),
        ]);
        let ranked = rank_within_class(&t, 0).unwrap();
        assert_eq!(ranked[0], (1, 1.0));
        assert_eq!(ranked[1].0, 2);
        assert!(ranked[1].1.abs() < 1e-12);
    }

    #[test]
    fn zero_norm_candidate_named_in_error() {
        let t = table_from(vec![
            (0, 0, vec![1.0, 0.0]),
            (7, 0, vec![0.0, 0.0]),
        ]);
        let err = rank_within_class(&t, 0).unwrap_err();
        assert!(matches!(err, FlagsError::Degenerate(_)));
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn fifty_member_class_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let rows: Vec<(usize, usize, Vec<f64>)> = (0..50)
            .map(|i| (i, 0, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let t = table_from(rows);
        for q in [0usize, 13, 49] {
            let fast = rank_within_class(&t, q).unwrap();
            let slow = brute_force_rank(&t, q);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn duplicated_features_tie_break_by_id() {
        let t = table_from(vec![
            (0, 0, vec![1.0, 0.0]),
            (5, 0, vec![2.0, 0.0]),
            (3, 0, vec![1.0, 0.0]),
            (9, 0, vec![3.0, 0.0]),
            (1, 0, vec![0.0, 1.0]),
        ]);
        let ranked = rank_within_class(&t, 0).unwrap();
        // all of 5, 3, 9 have cosine exactly 1; ids ascending
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 5, 9, 1]);
    }

    #[test]
    fn select_pairs_fig1_scenario() {
        // n = 9 candidates: global = ranks 0,1; local = ranks 3,4
        let ranked: Vec<(usize, f64)> = (0..9).map(|i| (100 + i, 1.0 - 0.1 * i as f64)).collect();
        let (global, local) = select_pairs(&ranked).unwrap();
        assert_eq!(global, [100, 101]);
        assert_eq!(local, [103, 104]);
    }

    #[test]
    fn select_pairs_n4_fallback() {
        let ranked: Vec<(usize, f64)> = (0..4).map(|i| (i, 1.0 - 0.1 * i as f64)).collect();
        let (global, local) = select_pairs(&ranked).unwrap();
        assert_eq!(global, [0, 1]);
        assert_eq!(local, [2, 3]);
    }

    #[test]
    fn select_pairs_too_small() {
        let ranked: Vec<(usize, f64)> = (0..3).map(|i| (i, 0.5)).collect();
        assert!(matches!(select_pairs(&ranked), Err(FlagsError::ClassSize(_))));
    }

    #[test]
    fn select_pairs_matches_index_arithmetic_oracle() {
        // independent recomputation of the index convention
        for n in 4..=100 {
            let ranked: Vec<(usize, f64)> = (0..n).map(|i| (i, -(i as f64))).collect();
            let (global, local) = select_pairs(&ranked).unwrap();
            assert_eq!(global, [0, 1]);
            let mid = (n - 2) / 2;
            let expect_local = if mid <= 1 { [2, 3] } else { [mid, mid + 1] };
            assert_eq!(local, expect_local, "n={n}");
        }
    }

    #[test]
    fn manifest_counts_and_integrity() {
        let cfg = DataConfig {
            num_classes: 2,
            contexts_per_class: 2,
            samples_per_class: 6,
            input_dim: 8,
            noise_sigma: 0.1,
        };
        let ds = gen_synthetic(&cfg, 2).unwrap();
        let model_cfg = crate::model::ModelConfig {
            input_dim: 8,
            hidden_dim: 6,
            num_hidden_layers: 1,
            feature_dim: 4,
            head_hidden_dim: 4,
            embed_dim: 3,
            momentum_m: 0.999,
        };
        let state = init_model(&model_cfg, 1).unwrap();
        let table = compute_features(&state.query_encoder, &ds, "test").unwrap();
        let manifest = build_manifest(&table).unwrap();
        assert_eq!(manifest.entries.len(), 12);
        validate_manifest(&manifest, &ds).unwrap();
        for e in &manifest.entries {
            let ids: Vec<usize> = e.global.iter().chain(e.local.iter()).copied().collect();
            assert_eq!(ids.len(), 4);
            for id in ids {
                assert_eq!(ds.sample(id).unwrap().class, e.class);
            }
        }
    }

    #[test]
    fn manifest_rebuild_is_byte_identical() {
        let cfg = DataConfig {
            num_classes: 2,
            contexts_per_class: 2,
            samples_per_class: 5,
            input_dim: 8,
            noise_sigma: 0.05,
        };
        let ds = gen_synthetic(&cfg, 9).unwrap();
        let model_cfg = crate::model::ModelConfig {
            input_dim: 8,
            hidden_dim: 6,
            num_hidden_layers: 1,
            feature_dim: 4,
            head_hidden_dim: 4,
            embed_dim: 3,
            momentum_m: 0.999,
        };
        let state = init_model(&model_cfg, 1).unwrap();
        let table = compute_features(&state.query_encoder, &ds, "test").unwrap();
        let m1 = build_manifest(&table).unwrap();
        let m2 = build_manifest(&table).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.jsonl");
        let p2 = dir.path().join("m2.jsonl");
        write_manifest(&m1, &p1).unwrap();
        write_manifest(&m2, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn undersized_class_fails_whole_build() {
        let t = table_from(vec![
            (0, 0, vec![1.0, 0.0]),
            (1, 0, vec![0.9, 0.1]),
            (2, 0, vec![0.8, 0.2]),
            (3, 0, vec![0.7, 0.3]),
            (4, 0, vec![0.6, 0.4]),
            // class 1 has only 3 members
            (5, 1, vec![0.0, 1.0]),
            (6, 1, vec![0.1, 0.9]),
            (7, 1, vec![0.2, 0.8]),
        ]);
        assert!(matches!(build_manifest(&t), Err(FlagsError::ClassSize(_))));
    }

    #[test]
    fn zero_weight_encoder_propagates_degenerate_error() {
        let cfg = DataConfig {
            num_classes: 1,
            contexts_per_class: 1,
            samples_per_class: 5,
            input_dim: 4,
            noise_sigma: 0.0,
        };
        let ds = gen_synthetic(&cfg, 0).unwrap();
        let model_cfg = crate::model::ModelConfig {
            input_dim: 4,
            hidden_dim: 3,
            num_hidden_layers: 1,
            feature_dim: 2,
            head_hidden_dim: 2,
            embed_dim: 2,
            momentum_m: 0.999,
        };
        let mut state = init_model(&model_cfg, 0).unwrap();
        for l in state.query_encoder.layers.iter_mut() {
            l.weight.values.iter_mut().for_each(|v| *v = 0.0);
            l.bias.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let table = compute_features(&state.query_encoder, &ds, "test").unwrap();
        assert!(table.rows.iter().all(|r| r.feature.iter().all(|&v| v == 0.0)));
        assert!(matches!(
            rank_within_class(&table, 0),
            Err(FlagsError::Degenerate(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let m = PairManifest {
            entries: vec![
                ManifestEntry { id: 0, class: 0, global: [1, 2], local: [3, 4] },
                ManifestEntry { id: 1, class: 0, global: [0, 2], local: [3, 4] },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&m, &p).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(m, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // manifest invariants hold on random datasets
        #[test]
        fn manifest_invariants_on_random_tables(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let classes = rng.random_range(1..4usize);
            let per_class = rng.random_range(5..12usize);
            let d = 5;
            let mut rows = Vec::new();
            let mut id = 0;
            for c in 0..classes {
                for _ in 0..per_class {
                    let f: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    rows.push((id, c, f));
                    id += 1;
                }
            }
            let t = table_from(rows);
            let manifest = build_manifest(&t).unwrap();
            prop_assert_eq!(manifest.entries.len(), classes * per_class);
            for e in &manifest.entries {
                prop_assert!(!e.global.contains(&e.id));
                prop_assert!(!e.local.contains(&e.id));
                prop_assert!(e.global[0] != e.global[1]);
                prop_assert!(e.local[0] != e.local[1]);
                prop_assert!(!e.global.iter().any(|g| e.local.contains(g)));

                // min global similarity >= max local similarity
                let ranked = rank_within_class(&t, e.id).unwrap();
                let sim = |id: usize| ranked.iter().find(|r| r.0 == id).unwrap().1;
                let min_g = e.global.iter().map(|&g| sim(g)).fold(f64::INFINITY, f64::min);
                let max_l = e.local.iter().map(|&l| sim(l)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(min_g >= max_l);
            }
        }
    }
}
