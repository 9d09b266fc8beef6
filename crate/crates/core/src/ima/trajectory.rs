//! Per-turn IM series for plotting.

use serde::{Deserialize, Serialize};

use super::{IMSet, TurnAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub turn: u32,
    pub coded_types: IMSet,
    pub level1: bool,
    pub level2: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_turn_with_level(&self, level: u8) -> Option<u32> {
        self.points
            .iter()
            .find(|p| if level == 1 { p.level1 } else { p.level2 })
            .map(|p| p.turn)
    }
}

/// Coded types of each annotated turn, ordered by turn.
pub fn trajectory(annotations: &[TurnAnnotation]) -> Trajectory {
    let mut points: Vec<TrajectoryPoint> = annotations
        .iter()
        .map(|a| TrajectoryPoint {
            turn: a.turn_index(),
            coded_types: a.coded_types().clone(),
            level1: a.coded_types().iter().any(|t| t.level() == 1),
            level2: a.coded_types().iter().any(|t| t.level() == 2),
        })
        .collect();
    points.sort_by_key(|p| p.turn);
    Trajectory { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ima::{IMSpan, IMType, Resource};

    fn coded(turn: u32, t: IMType) -> TurnAnnotation {
        TurnAnnotation::new(
            turn,
            "",
            vec![IMSpan::new(t, 0, 1, "x")],
            Resource::ClientGenerated,
            0.8,
            "",
        )
        .unwrap()
    }

    #[test]
    fn empty() {
        assert!(trajectory(&[]).is_empty());
    }

    #[test]
    fn monotone_session() {
        let l1 = [IMType::ActionI, IMType::ReflectionI, IMType::ProtestI];
        let l2 = [IMType::ActionII, IMType::ReflectionII, IMType::ProtestII];
        let anns: Vec<_> = (1..=20u32)
            .rev()
            .map(|t| {
                coded(
                    t,
                    if t <= 10 {
                        l1[t as usize % 3]
                    } else {
                        l2[t as usize % 3]
                    },
                )
            })
            .collect();
        let tr = trajectory(&anns);
        assert_eq!(tr.len(), 20);
        assert_eq!(tr.first_turn_with_level(2), Some(11));
        assert_eq!(tr.first_turn_with_level(1), Some(1));
        assert_eq!(tr.points[0].turn, 1);
    }
}
