use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::encoding::{l2_normalize, pca_fit, PcaModel, DEFAULT_WHITEN_EPSILON};
use crate::error::{MopError, Result};

/// Ranked database for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub query_id: String,
    /// Database ids with Euclidean distances, nearest first.
    pub ranked: Vec<(String, f64)>,
    pub average_precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub queries: Vec<QueryResult>,
    pub mean_average_precision: f64,
}

/// Query id to the ids of its relevant database items.
pub type Relevance = BTreeMap<String, BTreeSet<String>>;

/// Mean over the relevant items of the precision at each one's rank.
/// Relevant items that never appear in `ranked` contribute zero.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Result<f64> {
    let hits: Vec<bool> = ranked.iter().map(|id| relevant.contains(id.as_ref())).collect();
    average_precision_from_hits(&hits, relevant.len())
}

/// [`average_precision`] from per-rank relevance flags and the size of the
/// relevant set.
pub fn average_precision_from_hits(hits: &[bool], relevant: usize) -> Result<f64> {
    let found = hits.iter().filter(|&&h| h).count();
    if relevant == 0 || found > relevant {
        return Err(MopError::invalid(format!(
            "average precision needs 1 <= relevant count, got {relevant} with {found} hits"
        )));
    }
    let mut seen = 0usize;
    let mut sum = 0.0;
    for (i, &h) in hits.iter().enumerate() {
        if h {
            seen += 1;
            sum += seen as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(MopError::invalid("mAP needs at least one query"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Euclidean nearest-neighbour retrieval.
///
/// Each query ranks the whole database by ascending distance, ties in
/// database order, with any database item sharing the query's id left out.
/// The query's own id is also dropped from its relevant set, which must
/// still be non-empty.
pub fn retrieve<D, Q>(
    db_ids: &[String],
    db: &[D],
    query_ids: &[String],
    queries: &[Q],
    relevance: &Relevance,
) -> Result<RetrievalResult>
where
    D: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    if db.is_empty() {
        return Err(MopError::invalid("retrieval database is empty"));
    }
    if db_ids.len() != db.len() || query_ids.len() != queries.len() {
        return Err(MopError::invalid("retrieval ids and feature rows differ in count"));
    }
    if queries.is_empty() {
        return Err(MopError::invalid("retrieval needs at least one query"));
    }
    let dim = db[0].as_ref().len();
    if db.iter().any(|r| r.as_ref().len() != dim)
        || queries.iter().any(|q| q.as_ref().len() != dim)
    {
        return Err(MopError::invalid(format!(
            "retrieval features must all have length {dim}"
        )));
    }
    let results = query_ids
        .par_iter()
        .zip(queries.par_iter())
        .map(|(qid, q)| {
            let mut relevant = relevance
                .get(qid)
                .cloned()
                .ok_or_else(|| MopError::invalid(format!("no relevance entry for query {qid:?}")))?;
            relevant.remove(qid);
            if relevant.is_empty() {
                return Err(MopError::invalid(format!(
                    "query {qid:?} has no relevant items besides itself"
                )));
            }
            let q = q.as_ref();
            let mut ranked: Vec<(usize, f64)> = db
                .iter()
                .enumerate()
                .filter(|(i, _)| db_ids[*i] != *qid)
                .map(|(i, d)| (i, euclidean(q, d.as_ref())))
                .collect();
            ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let ranked: Vec<(String, f64)> =
                ranked.into_iter().map(|(i, d)| (db_ids[i].clone(), d)).collect();
            let ids: Vec<&str> = ranked.iter().map(|(id, _)| id.as_str()).collect();
            let ap = average_precision(&ids, &relevant)?;
            Ok(QueryResult {
                query_id: qid.clone(),
                ranked,
                average_precision: ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aps: Vec<f64> = results.iter().map(|r| r.average_precision).collect();
    Ok(RetrievalResult {
        mean_average_precision: mean_average_precision(&aps)?,
        queries: results,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// PCA (optionally whitened) compression of retrieval descriptors; the
/// compressed vectors are L2-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Compressor {
    pub pca: PcaModel,
}

impl Compressor {
    pub fn fit<R: AsRef<[f64]>>(training: &[R], d_out: usize, whiten: bool) -> Result<Self> {
        let pca = pca_fit(training, d_out)?
            .with_whitening(whiten)
            .with_epsilon(DEFAULT_WHITEN_EPSILON);
        Ok(Compressor { pca })
    }

    pub fn output_dim(&self) -> usize {
        self.pca.output_dim()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(l2_normalize(self.pca.transform(v)?))
    }

    pub fn apply_all<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.par_iter().map(|r| self.apply(r.as_ref())).collect()
    }
}
