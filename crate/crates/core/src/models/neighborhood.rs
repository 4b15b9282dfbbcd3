use std::collections::HashMap;
use std::rc::Rc;

use crate::features::FeatureSet;
use crate::graph::YearSplit;

use super::ModelError;

/// Flattened neighbor lists in CSR form. Segment `g` spans
/// `offsets[g]..offsets[g + 1]` of `members`; `groups[e]` is the segment of
/// entry `e` and `owners[e]` the row that segment belongs to. The first member
/// of every segment is the owner itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub offsets: Rc<Vec<usize>>,
    pub members: Rc<Vec<usize>>,
    pub groups: Rc<Vec<usize>>,
    pub owners: Rc<Vec<usize>>,
}

impl Neighborhoods {
    /// `lists[g]` holds the non-self neighbors of `owners[g]`, all given as
    /// rows of the same row space.
    pub fn from_lists(owners: &[usize], lists: &[Vec<usize>]) -> Self {
        assert_eq!(owners.len(), lists.len());
        let mut offsets = Vec::with_capacity(owners.len() + 1);
        let mut members = Vec::new();
        let mut groups = Vec::new();
        let mut entry_owners = Vec::new();
        offsets.push(0);
        for (g, (&own, list)) in owners.iter().zip(lists).enumerate() {
            members.push(own);
            members.extend_from_slice(list);
            groups.extend(std::iter::repeat(g).take(list.len() + 1));
            entry_owners.extend(std::iter::repeat(own).take(list.len() + 1));
            offsets.push(members.len());
        }
        Self {
            offsets: Rc::new(offsets),
            members: Rc::new(members),
            groups: Rc::new(groups),
            owners: Rc::new(entry_owners),
        }
    }

    /// Every node attends to itself only.
    pub fn self_only(n: usize) -> Self {
        let owners: Vec<usize> = (0..n).collect();
        Self::from_lists(&owners, &vec![Vec::new(); n])
    }

    pub fn segments(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Members of segment `g`, self first.
    pub fn of(&self, g: usize) -> &[usize] {
        &self.members[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn entries(&self) -> usize {
        self.members.len()
    }

    /// The first `n` segments. Valid as a standalone neighborhood only when
    /// those segments reference rows below `n`, which holds for the prior
    /// block of a causal split.
    pub fn truncate(&self, n: usize) -> Self {
        let owners: Vec<usize> = (0..n).map(|g| self.of(g)[0]).collect();
        let lists: Vec<Vec<usize>> = (0..n).map(|g| self.of(g)[1..].to_vec()).collect();
        Self::from_lists(&owners, &lists)
    }

    /// Owner rows and their non-self neighbors.
    pub fn lists(&self) -> (Vec<usize>, Vec<Vec<usize>>) {
        (0..self.segments())
            .map(|g| (self.of(g)[0], self.of(g)[1..].to_vec()))
            .unzip()
    }
}

/// Neighborhood of each feature row: itself plus the prior nodes it cites.
///
/// Prior nodes take their neighbors from the prior edges and target nodes
/// from the target edges. Any edge that would let information flow into a
/// prior node from a target node, or that leaves the split, is refused.
pub fn build_neighborhoods(split: &YearSplit, features: &FeatureSet) -> Result<Neighborhoods, ModelError> {
    let prior = split.prior_set();
    let target = split.target_set();
    let row = |node: usize| {
        features
            .row_of(node)
            .ok_or(ModelError::CausalityViolation { citing: node, cited: node })
    };
    let mut lists: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(a, b) in &split.prior_edges {
        if !prior.contains(&a) || !prior.contains(&b) {
            return Err(ModelError::CausalityViolation { citing: a, cited: b });
        }
        lists.entry(row(a)?).or_default().push(row(b)?);
    }
    for &(a, b) in &split.target_edges {
        if !target.contains(&a) || !prior.contains(&b) {
            return Err(ModelError::CausalityViolation { citing: a, cited: b });
        }
        lists.entry(row(a)?).or_default().push(row(b)?);
    }
    let owners: Vec<usize> = (0..features.len()).collect();
    let lists: Vec<Vec<usize>> = owners.iter().map(|r| lists.remove(r).unwrap_or_default()).collect();
    Ok(Neighborhoods::from_lists(&owners, &lists))
}
