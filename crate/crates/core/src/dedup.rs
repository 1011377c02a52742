//! Partitioning POVM elements into classes of physically identical
//! measurements, and aggregating operators and counts classwise.
//!
//! Two elements belong to the same class when their trace-normalized
//! operators agree elementwise within tolerance. The partition is built by
//! union-find over the pairwise relation; if the relation is intransitive at
//! the tolerance boundary the build fails loudly instead of silently merging.


use crate::counts::CountRecord;
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::measurement::{MeasElement, MeasKey};
use crate::scalar::{lit, Scalar};

/// Default tolerance for "same normalized operator": ideal-model duplicates
/// agree to machine precision, while calibrated transmittances make
/// near-duplicates genuinely distinct well above this.
pub const CLASS_TOL: f64 = 1e-9;

/// Elements with trace at or below this cannot be normalized and are dropped.
pub const CLASS_TRACE_FLOOR: f64 = 1e-14;

/// One equivalence class of physically identical POVM elements.
#[derive(Debug, Clone)]
pub struct MeasurementClass<T> {
    pub id: usize,
    /// Member keys in ascending key order.
    pub members: Vec<MeasKey>,
    /// Sum of the member operators.
    pub aggregated_op: ComplexMatrix<T>,
}

impl<T: Scalar> MeasurementClass<T> {
    pub fn trace(&self) -> T {
        self.aggregated_op.trace().re
    }
}

/// Result of a class build: the partition plus any unnormalizable elements
/// that were dropped (key and trace).
#[derive(Debug, Clone)]
pub struct ClassPartition<T> {
    pub classes: Vec<MeasurementClass<T>>,
    pub dropped: Vec<(MeasKey, f64)>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = i;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index wins so class order follows key order.
            if ra < rb {
                self.parent[rb] = ra;
            } else {
                self.parent[ra] = rb;
            }
        }
    }
}

/// Largest elementwise distance, with early exit once `tol` is exceeded.
fn within_tol<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>, tol: T) -> bool {
    a.data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| (x - y).norm() <= tol)
}

/// Partitions elements into measurement classes at the given tolerance.
///
/// Classes are ordered by their first member's key; members within a class
/// are in ascending key order; the aggregated operator is the plain sum of
/// the member operators.
pub fn build_classes<T: Scalar>(elements: &[MeasElement<T>], tol: T) -> Result<ClassPartition<T>> {
    if elements.is_empty() {
        return Ok(ClassPartition {
            classes: Vec::new(),
            dropped: Vec::new(),
        });
    }
    let dim = elements[0].op.rows();
    for e in elements {
        if e.op.rows() != dim || e.op.cols() != dim {
            return Err(Error::shape(format!(
                "element {} is {}x{}, expected {dim}x{dim}",
                e.key.describe(),
                e.op.rows(),
                e.op.cols()
            )));
        }
    }

    // Deterministic processing order: ascending key.
    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by(|&a, &b| elements[a].key.cmp(&elements[b].key));

    let floor = lit::<T>(CLASS_TRACE_FLOOR);
    let mut dropped = Vec::new();
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    let mut normalized: Vec<ComplexMatrix<T>> = Vec::with_capacity(order.len());
    for &idx in &order {
        let tr = elements[idx].op.trace().re;
        if tr <= floor {
            dropped.push((elements[idx].key.clone(), tr.to_f64().unwrap_or(0.0)));
            continue;
        }
        kept.push(idx);
        normalized.push(elements[idx].op.scale(T::one() / tr));
    }

    let n = kept.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if within_tol(&normalized[i], &normalized[j], tol) {
                uf.union(i, j);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group = vec![usize::MAX; n];
    for i in 0..n {
        let root = uf.find(i);
        if root_to_group[root] == usize::MAX {
            root_to_group[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_to_group[root]].push(i);
    }

    // Transitivity sanity: within each merged class every pair must satisfy
    // the direct relation; otherwise union-find silently closed an
    // intransitive relation and the tolerance is sitting on a boundary.
    for group in &groups {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                if !within_tol(&normalized[i], &normalized[j], tol) {
                    return Err(Error::Contract(format!(
                        "equivalence relation is intransitive at tolerance {:e}: \
                         members {} and {} were merged only through intermediaries",
                        tol.to_f64().unwrap_or(f64::NAN),
                        elements[kept[i]].key.describe(),
                        elements[kept[j]].key.describe()
                    )));
                }
            }
        }
    }

    let classes = groups
        .into_iter()
        .enumerate()
        .map(|(id, group)| {
            let mut aggregated_op = ComplexMatrix::zeros(dim, dim);
            let mut members = Vec::with_capacity(group.len());
            for &i in &group {
                aggregated_op = aggregated_op.add(&elements[kept[i]].op);
                members.push(elements[kept[i]].key.clone());
            }
            MeasurementClass {
                id,
                members,
                aggregated_op,
            }
        })
        .collect();

    Ok(ClassPartition { classes, dropped })
}

/// Sums raw counts over the members of each class; the result is indexed by
/// class id. Every member key must be present in the record.
pub fn aggregate_counts<T: Scalar>(
    classes: &[MeasurementClass<T>],
    raw: &CountRecord,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(classes.len());
    for class in classes {
        let mut sum = 0.0;
        for key in &class.members {
            match raw.get(key) {
                Some(c) => sum += c,
                None => return Err(Error::IncompleteData(key.describe())),
            }
        }
        out.push(sum);
    }
    Ok(out)
}
