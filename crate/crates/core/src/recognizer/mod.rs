//! Action definitions, matching over the constraint stream, and timelines.

pub mod dsl;
mod matcher;
pub mod timeline;

pub use dsl::{dump_actions, parse_actions, ActionDefinition, DslError, RoleKind};
pub use matcher::{match_actions, match_actions_with, MatchError, MatchOptions};
pub use timeline::{
    parse_timeline, parse_timeline_str, serialize_timeline, write_timeline, ActionInstance, Timeline,
    TimelineError,
};

use crate::trace::{HandSet, HandSide, Point2};

/// Source of the default library.
pub const BUILTIN_ACTIONS: &str = include_str!("../../data/actions.dsl");

/// Default library with pouring reduced to co-movement only (no column
/// alignment or rotation check).
pub fn builtin_source(strict_pour: bool) -> String {
    if strict_pour {
        BUILTIN_ACTIONS.replace("phase: C12(a, p) & C10(a) & C9(a, h);", "phase: C9(a, h);")
    } else {
        BUILTIN_ACTIONS.to_string()
    }
}

pub fn builtin_actions(strict_pour: bool) -> Vec<ActionDefinition> {
    parse_actions(&builtin_source(strict_pour)).expect("built-in library is valid")
}

/// Hand closest to `object`; ties go to the right hand. `None` when no hand
/// is observed.
pub fn bind_hand(hands: &HandSet, object: Point2) -> Option<HandSide> {
    match (hands.left, hands.right) {
        (None, None) => None,
        (Some(_), None) => Some(HandSide::Left),
        (None, Some(_)) => Some(HandSide::Right),
        (Some(l), Some(r)) => {
            if l.distance(&object) < r.distance(&object) {
                Some(HandSide::Left)
            } else {
                Some(HandSide::Right)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintId;
    use dsl::{HoldCount, SubKind};

    fn hands(left: Option<(f64, f64)>, right: Option<(f64, f64)>) -> HandSet {
        HandSet { left: left.map(|(x, y)| Point2::new(x, y)), right: right.map(|(x, y)| Point2::new(x, y)) }
    }

    #[test]
    fn bind_hand_examples() {
        let o = Point2::new(100.0, 100.0);
        assert_eq!(bind_hand(&hands(Some((180.0, 100.0)), Some((105.0, 100.0))), o), Some(HandSide::Right));
        assert_eq!(bind_hand(&hands(Some((180.0, 100.0)), None), o), Some(HandSide::Left));
        assert_eq!(bind_hand(&hands(Some((90.0, 100.0)), Some((110.0, 100.0))), o), Some(HandSide::Right));
        assert_eq!(bind_hand(&hands(None, None), o), None);
    }

    #[test]
    fn builtin_pick_uses_expected_constraints() {
        let defs = builtin_actions(false);
        let pick = defs.iter().find(|d| d.name == "Pick").unwrap();
        let statics: Vec<ConstraintId> = pick.static_constraints.iter().map(|a| a.constraint).collect();
        assert_eq!(statics, vec![ConstraintId::C1, ConstraintId::C3]);
        assert_eq!(pick.static_constraints[1].affordance.as_deref(), Some("pick"));
        assert_eq!(pick.phases[0].literals[0].hold, Some(HoldCount::ThN));
        assert_eq!(pick.phases[0].literals[0].atom.constraint, ConstraintId::C5);
        let co_move: Vec<ConstraintId> = pick.phases[1].literals.iter().map(|l| l.atom.constraint).collect();
        assert_eq!(co_move, vec![ConstraintId::C5, ConstraintId::C9]);
    }

    #[test]
    fn builtin_place_and_pour() {
        let defs = builtin_actions(false);
        let place = defs.iter().find(|d| d.name == "Place").unwrap();
        assert_eq!(place.sub_actions[0].kind, SubKind::After);
        let lits = &place.phases[0].literals;
        assert_eq!(lits.iter().map(|l| (l.atom.constraint, l.negated)).collect::<Vec<_>>(), vec![
            (ConstraintId::C6, false),
            (ConstraintId::C9, true),
            (ConstraintId::C11, false)
        ]);
        let pour = defs.iter().find(|d| d.name == "Pour").unwrap();
        assert_eq!(pour.affordances().collect::<Vec<_>>(), vec!["pour", "accept_pouring"]);
        assert_eq!(pour.phases[0].literals.len(), 3);
        let strict = builtin_actions(true);
        let strict_pour = strict.iter().find(|d| d.name == "Pour").unwrap();
        assert_eq!(strict_pour.phases[0].literals.len(), 1);
        assert_eq!(strict_pour.phases[0].literals[0].atom.constraint, ConstraintId::C9);
    }

    #[test]
    fn watering_plant_shares_active_role() {
        let defs = builtin_actions(false);
        let wp = defs.iter().find(|d| d.name == "wateringPlant").unwrap();
        assert!(wp.is_composite());
        let subs: Vec<(&str, &[String])> = wp.sub_actions.iter().map(|s| (s.action.as_str(), s.roles.as_slice())).collect();
        assert_eq!(subs[0].0, "Pour");
        assert_eq!(subs[1].0, "Place");
        assert_eq!(subs[0].1[0], subs[1].1[0]);
    }

    #[test]
    fn dump_round_trips() {
        for strict in [false, true] {
            let defs = builtin_actions(strict);
            assert_eq!(parse_actions(&dump_actions(&defs)).unwrap(), defs);
        }
    }
}
