use super::NetworkSpec;

/// Receptive-field sizes (in input pixels, per side) for one layer group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupField {
    /// Field of the two stacked convolutions alone, `2k - 1`.
    pub conv_pair: usize,
    /// Cumulative field of one unit after the group's second convolution.
    pub after_convs: usize,
    /// Cumulative field after the group's pooling layer.
    pub after_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    pub groups: Vec<GroupField>,
}

impl ReceptiveField {
    /// Field of one unit entering the fully-connected layers.
    pub fn total(&self) -> usize {
        self.groups.last().map_or(1, |g| g.after_pool)
    }
}

/// Standard composition: a `k`-wide layer adds `(k - 1) * jump` to the field,
/// and stride-2 pooling doubles the jump for everything after it.
pub fn receptive_field(spec: &NetworkSpec) -> ReceptiveField {
    let mut field = 1;
    let mut jump = 1;
    let groups = spec
        .groups
        .iter()
        .map(|g| {
            let k = g.kernel_size;
            field += 2 * (k - 1) * jump;
            let after_convs = field;
            field += jump;
            jump *= 2;
            GroupField {
                conv_pair: 2 * k - 1,
                after_convs,
                after_pool: field,
            }
        })
        .collect();
    ReceptiveField { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupSpec;

    fn spec(k: usize) -> NetworkSpec {
        NetworkSpec {
            groups: vec![GroupSpec::new(k, 1, 1); 3],
            ..NetworkSpec::with_landmarks(1)
        }
    }

    #[test]
    fn stacked_pairs() {
        assert_eq!(receptive_field(&spec(3)).groups[0].conv_pair, 5);
        assert_eq!(receptive_field(&spec(1)).groups[0].conv_pair, 1);
        assert_eq!(receptive_field(&spec(5)).groups[0].conv_pair, 9);
    }

    #[test]
    fn cumulative_default() {
        let rf = receptive_field(&spec(3));
        let after: Vec<_> = rf
            .groups
            .iter()
            .map(|g| (g.after_convs, g.after_pool))
            .collect();
        assert_eq!(after, vec![(5, 6), (14, 16), (32, 36)]);
        assert_eq!(rf.total(), 36);
    }
}
