mod common;

use std::collections::{HashMap, HashSet, VecDeque};

use proptest::prelude::*;

use updatelab::demo::{make_demo, GapMode, Strategy as Condition};
use updatelab::feedback::{diff_corrections, StepEdits};
use updatelab::gridworld::{
    generate_board, reset, rollout, step, Action, BoardSpec, Dir, FnAgent, GenParams, Pos, State, MAX_STEPS,
};
use updatelab::policy::{build_bank, PolicyId, Topology, DEFAULT_GAMMA};
use updatelab::reward::{featurize, PreferenceVector};
use updatelab::rng_stream;

fn action() -> impl Strategy<Value = Action> {
    (0usize..4).prop_map(|i| Action::ALL[i])
}

/// Breadth-first search over poses using Forward and turns only, with
/// balls as obstacles. Returns the fewest steps to the goal.
fn steps_to_goal(b: &BoardSpec) -> Option<u32> {
    let start = b.start();
    let mut seen = HashSet::from([(start.pos, start.dir)]);
    let mut queue = VecDeque::from([(start.pos, start.dir, 0u32)]);
    while let Some((p, d, n)) = queue.pop_front() {
        if p == b.goal() {
            return Some(n);
        }
        let mut next = vec![(p, d.right()), (p, d.left())];
        if let Some(q) = b.ahead(p, d) {
            if b.ball_at(q).is_none() {
                next.push((q, d));
            }
        }
        for (q, e) in next {
            if seen.insert((q, e)) {
                queue.push_back((q, e, n + 1));
            }
        }
    }
    None
}

fn check_state(b: &BoardSpec, s: &State) {
    assert!(s.steps <= MAX_STEPS);
    assert_eq!(s.terminated, s.pos == b.goal() || s.steps == MAX_STEPS);
    assert!(s.pos.x < b.width() && s.pos.y < b.height());
    for i in 0..32 {
        if s.remaining.contains(i) {
            assert!(i < b.balls().len());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_boards_are_valid(seed in any::<u64>()) {
        let b = generate_board(seed, &GenParams::default()).unwrap();
        let mut cells: Vec<Pos> = b.balls().iter().map(|x| x.pos).collect();
        cells.extend(b.lava().iter().copied());
        cells.push(b.goal());
        cells.push(b.start().pos);
        let distinct: HashSet<Pos> = cells.iter().copied().collect();
        prop_assert_eq!(distinct.len(), cells.len());
        prop_assert!(cells.iter().all(|p| p.x < b.width() && p.y < b.height()));
        prop_assert!(!b.balls().is_empty());
        prop_assert!(steps_to_goal(&b).is_some_and(|n| n <= MAX_STEPS));
        let text = serde_json::to_string(&b).unwrap();
        prop_assert_eq!(serde_json::from_str::<BoardSpec>(&text).unwrap(), b);
    }

    #[test]
    fn random_walks_respect_state_and_trajectory_invariants(
        seed in any::<u64>(),
        script in prop::collection::vec(action(), 1..100),
    ) {
        let b = generate_board(seed, &GenParams::default()).unwrap();
        let mut s = reset(&b).unwrap();
        check_state(&b, &s);
        for &a in &script {
            if s.terminated {
                prop_assert!(step(&s, a, &b).is_err());
                break;
            }
            let (next, ev) = step(&s, a, &b).unwrap();
            prop_assert_eq!(next.steps, s.steps + 1);
            prop_assert!(next.remaining.is_subset_of(s.remaining));
            if let Some(c) = ev.picked {
                prop_assert_eq!(a, Action::Pickup);
                let ahead = b.ahead(s.pos, s.dir).unwrap();
                let i = b.ball_at(ahead).unwrap();
                prop_assert!(s.remaining.contains(i));
                prop_assert_eq!(b.balls()[i].color, c);
            }
            prop_assert_eq!(ev.lava, next.pos != s.pos && b.is_lava(next.pos));
            check_state(&b, &next);
            s = next;
        }

        let i = std::cell::Cell::new(0);
        let agent = FnAgent(|_: &BoardSpec, _: &State| {
            let a = script[i.get() % script.len()];
            i.set(i.get() + 1);
            a
        });
        let t = rollout(&agent, &b).unwrap();
        prop_assert!(t.len() <= MAX_STEPS as usize);
        prop_assert!(t.terminal.terminated);
        t.verify(&b).unwrap();
        let c = featurize(&t);
        let count = |col| b.balls().iter().filter(|x| x.color == col).count() as u32;
        use updatelab::gridworld::Color;
        prop_assert!(c.blue <= count(Color::Blue) && c.green <= count(Color::Green) && c.red <= count(Color::Red));
        prop_assert_eq!(c.steps as usize, t.len());
    }

    #[test]
    fn corrections_are_exactly_the_differing_steps(
        seed in any::<u64>(),
        edits in prop::collection::hash_map(0usize..70, action(), 0..12),
    ) {
        let b = generate_board(seed, &GenParams::default()).unwrap();
        let t = rollout(&FnAgent(|_: &BoardSpec, _: &State| Action::TurnRight), &b).unwrap();
        let cs = diff_corrections(&t, &b, &mut StepEdits(edits.clone())).unwrap();
        let want: Vec<usize> = (0..t.len())
            .filter(|i| edits.get(i).is_some_and(|&a| a != t.steps[*i].action))
            .collect();
        prop_assert_eq!(cs.iter().map(|c| c.step).collect::<Vec<_>>(), want);
        for c in &cs {
            prop_assert_ne!(c.agent_action, c.preferred_action);
            prop_assert_eq!(c.state, t.steps[c.step].state);
            prop_assert_eq!(&c.board_id, b.id());
        }
    }

    #[test]
    fn bank_adjacency_is_symmetric_and_irreflexive(
        k in 2usize..7,
        extra in prop::collection::vec((1u32..7, 1u32..7), 0..6),
    ) {
        let vectors: Vec<PreferenceVector> =
            (0..k).map(|i| PreferenceVector::new(i as f64, 1.0, -1.0, -3.0, -0.1)).collect();
        let mut edges: Vec<(PolicyId, PolicyId)> = (1..k as u32).map(|i| (PolicyId(i), PolicyId(i + 1))).collect();
        edges.extend(
            extra.into_iter()
                .filter(|&(a, b)| a != b && a <= k as u32 && b <= k as u32)
                .map(|(a, b)| (PolicyId(a), PolicyId(b))),
        );
        for topo in [Topology::FullyConnected, Topology::Ring, Topology::Explicit(edges)] {
            if topo == Topology::Ring && k < 3 {
                continue;
            }
            let bank = build_bank(&vectors, DEFAULT_GAMMA, &topo).unwrap();
            let adj: HashMap<PolicyId, Vec<PolicyId>> = bank
                .ids()
                .map(|id| (id, bank.neighborhood(id).unwrap().iter().map(|p| p.id()).collect()))
                .collect();
            for (id, ns) in &adj {
                prop_assert!(!ns.is_empty());
                prop_assert!(!ns.contains(id));
                prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
                for n in ns {
                    prop_assert!(adj[n].contains(id));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn demo_pairs_verify(old in 1u32..7, new in 1u32..7, strategy in 0usize..4, seed in any::<u64>()) {
        prop_assume!(old != new);
        let lab = common::lab();
        let strategies = [Condition::Control, Condition::Same, Condition::Random, Condition::SalientContrast];
        let (o, n) = (lab.bank().get(PolicyId(old)).unwrap(), lab.bank().get(PolicyId(new)).unwrap());
        let fb = &lab.feedback_boards()[0];
        let mut rng = rng_stream(seed, 3);
        let demo = make_demo(strategies[strategy], fb, lab.pool(), o, n, &mut rng, GapMode::Absolute).unwrap();
        match demo {
            None => prop_assert_eq!(strategies[strategy], Condition::Control),
            Some(d) => {
                d.verify().unwrap();
                prop_assert_eq!(&d.traj_old.board_id, d.board.id());
                prop_assert_eq!(&d.traj_new.board_id, d.board.id());
            }
        }
    }
}

#[test]
fn ball_blocking_the_only_path_is_rejected() {
    use updatelab::gridworld::{Ball, Color, Pose};
    // A 3x1 corridor with a ball in the middle: the goal is unreachable.
    let b = BoardSpec::new(
        "blocked",
        3,
        1,
        vec![Ball { pos: Pos::new(1, 0), color: Color::Red }],
        [],
        Pos::new(2, 0),
        Pose { pos: Pos::new(0, 0), dir: Dir::E },
    );
    assert!(b.is_err());
}
