//! Mission-planner state machine.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::survey::{SurveyPlan, Waypoint, WaypointStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Executing,
    Paused,
    Completed,
    Aborted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Idle => "idle",
            Phase::Executing => "executing",
            Phase::Paused => "paused",
            Phase::Completed => "completed",
            Phase::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Aborted)
    }

    /// Phase changes the planner may make; staying in the same phase is always allowed.
    pub fn can_become(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (Idle, Executing)
                    | (Executing, Paused)
                    | (Paused, Executing)
                    | (Executing, Completed)
                    | (Executing, Aborted)
                    | (Paused, Aborted)
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    Start,
    GoalReached,
    GoalUnreachable,
    OperatorInterrupt,
    OperatorResume { goal: usize },
    PlanExhausted,
    Abort,
}

impl fmt::Display for MissionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MissionEvent::Start => f.write_str("start"),
            MissionEvent::GoalReached => f.write_str("goal_reached"),
            MissionEvent::GoalUnreachable => f.write_str("goal_unreachable"),
            MissionEvent::OperatorInterrupt => f.write_str("operator_interrupt"),
            MissionEvent::OperatorResume { goal } => write!(f, "operator_resume({goal})"),
            MissionEvent::PlanExhausted => f.write_str("plan_exhausted"),
            MissionEvent::Abort => f.write_str("abort"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MissionAction {
    SendGoal { index: usize, waypoint: Waypoint },
    SafeStop,
    Finish,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub from: Phase,
    pub to: Phase,
    pub event: MissionEvent,
    pub goal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub phase: Phase,
    pub goal: usize,
    pub status: Vec<WaypointStatus>,
    pub skipped: Vec<usize>,
    pub log: Vec<Transition>,
}

impl MissionState {
    pub fn new(plan: &SurveyPlan) -> Self {
        Self {
            phase: Phase::Idle,
            goal: 0,
            status: vec![WaypointStatus::Pending; plan.len()],
            skipped: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn reached(&self) -> usize {
        self.status
            .iter()
            .filter(|s| **s == WaypointStatus::Reached)
            .count()
    }

    fn next_pending(&self, from: usize) -> Option<usize> {
        (from..self.status.len()).find(|&i| self.status[i] == WaypointStatus::Pending)
    }

    /// Copies per-waypoint status into a plan for export.
    pub fn annotate(&self, plan: &mut SurveyPlan) {
        for (w, s) in plan.waypoints.iter_mut().zip(&self.status) {
            w.status = *s;
        }
    }
}

fn send(plan: &SurveyPlan, index: usize) -> MissionAction {
    MissionAction::SendGoal {
        index,
        waypoint: plan.waypoints[index].clone(),
    }
}

/// Advances the planner. Illegal events leave the state untouched and return an error.
pub fn mission_step(
    state: &MissionState,
    plan: &SurveyPlan,
    event: MissionEvent,
    t: f64,
) -> Result<(MissionState, MissionAction)> {
    use MissionEvent as E;
    use Phase as P;
    let illegal = || Error::IllegalTransition {
        phase: state.phase.to_string(),
        event: event.to_string(),
    };
    if state.status.len() != plan.len() {
        return Err(Error::Invariant(
            "mission state does not match the plan".into(),
        ));
    }
    let mut next = state.clone();
    let action = match (state.phase, event) {
        (P::Idle, E::Start) => match next.next_pending(0) {
            Some(i) => {
                next.phase = P::Executing;
                next.goal = i;
                send(plan, i)
            }
            None => return Err(illegal()),
        },
        (P::Executing, E::GoalReached | E::GoalUnreachable) => {
            let g = state.goal;
            if event == E::GoalReached {
                next.status[g] = WaypointStatus::Reached;
            } else {
                next.status[g] = WaypointStatus::Skipped;
                next.skipped.push(g);
            }
            match next.next_pending(g + 1) {
                Some(i) => {
                    next.goal = i;
                    send(plan, i)
                }
                None => {
                    next.phase = P::Completed;
                    MissionAction::Finish
                }
            }
        }
        (P::Executing, E::OperatorInterrupt) => {
            next.phase = P::Paused;
            MissionAction::SafeStop
        }
        (P::Paused, E::OperatorResume { goal }) => {
            if goal >= plan.len() {
                return Err(Error::IllegalTransition {
                    phase: state.phase.to_string(),
                    event: format!(
                        "{event} beyond the last waypoint {}",
                        plan.len().saturating_sub(1)
                    ),
                });
            }
            for s in &mut next.status[goal..] {
                *s = WaypointStatus::Pending;
            }
            next.phase = P::Executing;
            next.goal = goal;
            send(plan, goal)
        }
        (P::Executing, E::PlanExhausted) => {
            next.phase = P::Completed;
            MissionAction::Finish
        }
        (P::Executing | P::Paused, E::Abort) => {
            next.phase = P::Aborted;
            MissionAction::SafeStop
        }
        _ => return Err(illegal()),
    };
    debug_assert!(state.phase.can_become(next.phase));
    next.log.push(Transition {
        t,
        from: state.phase,
        to: next.phase,
        event,
        goal: next.goal,
    });
    Ok((next, action))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonomy::survey::plan_survey;
    use crate::geom::Polygon;

    fn plan() -> SurveyPlan {
        plan_survey(&Polygon::rectangle(0.0, 0.0, 40.0, 25.0), 10.0, 10.0, 0.0).unwrap()
    }

    fn executing_at(plan: &SurveyPlan, goal: usize) -> MissionState {
        let mut s = MissionState::new(plan);
        s = mission_step(&s, plan, MissionEvent::Start, 0.0).unwrap().0;
        for k in 0..goal {
            s = mission_step(&s, plan, MissionEvent::GoalReached, k as f64)
                .unwrap()
                .0;
        }
        s
    }

    #[test]
    fn unreachable_goal_is_skipped() {
        let p = plan();
        let s = executing_at(&p, 3);
        assert_eq!(s.goal, 3);
        let (n, a) = mission_step(&s, &p, MissionEvent::GoalUnreachable, 10.0).unwrap();
        assert_eq!(n.status[3], WaypointStatus::Skipped);
        assert_eq!(n.skipped, vec![3]);
        assert!(matches!(a, MissionAction::SendGoal { index: 4, .. }));
    }

    #[test]
    fn interrupt_and_resume() {
        let p = plan();
        let s = executing_at(&p, 2);
        let (paused, a) = mission_step(&s, &p, MissionEvent::OperatorInterrupt, 1.0).unwrap();
        assert_eq!((paused.phase, a), (Phase::Paused, MissionAction::SafeStop));
        let (res, a) =
            mission_step(&paused, &p, MissionEvent::OperatorResume { goal: 7 }, 2.0).unwrap();
        assert_eq!(res.phase, Phase::Executing);
        assert_eq!(res.goal, 7);
        assert!(matches!(a, MissionAction::SendGoal { index: 7, .. }));
    }

    #[test]
    fn illegal_events_leave_state_unchanged() {
        let p = plan();
        let s = MissionState::new(&p);
        let err = mission_step(&s, &p, MissionEvent::GoalReached, 0.0).unwrap_err();
        assert!(matches!(err, Error::IllegalTransition { .. }));
        let paused = mission_step(
            &executing_at(&p, 0),
            &p,
            MissionEvent::OperatorInterrupt,
            0.0,
        )
        .unwrap()
        .0;
        assert!(mission_step(&paused, &p, MissionEvent::OperatorResume { goal: 99 }, 0.0).is_err());
    }

    #[test]
    fn last_goal_completes() {
        let p = plan();
        let s = executing_at(&p, 14);
        let (n, a) = mission_step(&s, &p, MissionEvent::GoalReached, 0.0).unwrap();
        assert_eq!((n.phase, a), (Phase::Completed, MissionAction::Finish));
        assert_eq!(n.reached(), 15);
    }

    /// Exhaustive walk over every event sequence up to a fixed depth on a short plan.
    #[test]
    fn exhaustive_event_fuzzing_keeps_transitions_legal() {
        let p = plan_survey(&Polygon::rectangle(0.0, 0.0, 20.0, 1.0), 10.0, 10.0, 0.0).unwrap();
        assert_eq!(p.len(), 3);
        let events = [
            MissionEvent::Start,
            MissionEvent::GoalReached,
            MissionEvent::GoalUnreachable,
            MissionEvent::OperatorInterrupt,
            MissionEvent::OperatorResume { goal: 0 },
            MissionEvent::OperatorResume { goal: 2 },
            MissionEvent::OperatorResume { goal: 3 },
            MissionEvent::PlanExhausted,
            MissionEvent::Abort,
        ];
        let mut frontier = vec![MissionState::new(&p)];
        let mut visited = 0usize;
        for _depth in 0..10 {
            let mut next_frontier = Vec::new();
            for s in &frontier {
                for &e in &events {
                    visited += 1;
                    match mission_step(s, &p, e, 0.0) {
                        Ok((n, _)) => {
                            assert!(
                                s.phase.can_become(n.phase),
                                "{} -> {} on {e}",
                                s.phase,
                                n.phase
                            );
                            let resumed = matches!(e, MissionEvent::OperatorResume { .. });
                            assert!(resumed || n.goal >= s.goal);
                            assert!(!s.phase.is_terminal());
                            next_frontier.push(n);
                        }
                        Err(_) => {}
                    }
                }
            }
            frontier = next_frontier;
        }
        assert!(visited > 1_000, "{visited}");
    }
}
