//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_traits::{Float, Signed, Zero};
use rand::Rng;

use updatelab::feedback::FeedbackLog;
use updatelab::gridworld::{
    generate_board_with, reset, step, Action, Agent, BallSet, BoardSpec, CountRange, Dir, GenParams, Pos, State,
    StepEvents, Trajectory,
};
use updatelab::policy::{PolicyBank, PolicyId};
use updatelab::reward::PreferenceVector;
use updatelab::session::{Lab, DEFAULT_LAB_SEED};
use updatelab::rng_stream;

pub fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| Lab::generate(DEFAULT_LAB_SEED, &GenParams::default()).unwrap())
}

/// Exact binary rational `m * 2^e`. Every finite f64 is one, and sums and
/// products of them stay exact.
#[derive(Clone, Debug)]
pub struct Dyadic {
    m: BigInt,
    e: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic { m: BigInt::zero(), e: 0 }
    }

    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        let (mant, exp, sign) = x.integer_decode();
        Dyadic { m: BigInt::from(mant) * sign, e: exp as i64 }
    }

    pub fn mul(&self, o: &Dyadic) -> Dyadic {
        Dyadic { m: &self.m * &o.m, e: self.e + o.e }
    }

    pub fn add(&self, o: &Dyadic) -> Dyadic {
        let e = self.e.min(o.e);
        Dyadic {
            m: (&self.m << (self.e - e) as usize) + (&o.m << (o.e - e) as usize),
            e,
        }
    }

    pub fn sign(&self) -> i32 {
        if self.m.is_zero() {
            0
        } else if self.m.is_positive() {
            1
        } else {
            -1
        }
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Dyadic {}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, o: &Self) -> Ordering {
        let neg = Dyadic { m: -o.m.clone(), e: o.e };
        self.add(&neg).sign().cmp(&0)
    }
}

pub fn event_reward(e: &StepEvents, w: &PreferenceVector) -> Dyadic {
    let mut r = Dyadic::from_f64(w.step);
    if e.lava {
        r = r.add(&Dyadic::from_f64(w.lava));
    }
    if let Some(c) = e.picked {
        r = r.add(&Dyadic::from_f64(w.ball(c)));
    }
    r
}

/// Exact discounted return of a recorded episode.
pub fn exact_return(t: &Trajectory, w: &PreferenceVector, gamma: f64) -> Dyadic {
    let g = Dyadic::from_f64(gamma);
    let mut disc = Dyadic::from_f64(1.0);
    let mut total = Dyadic::zero();
    for s in &t.steps {
        total = total.add(&disc.mul(&event_reward(&s.events, w)));
        disc = disc.mul(&g);
    }
    total
}

/// Maximum exact discounted return over every action sequence of at most
/// `horizon` steps. Sequences reaching the same (position, facing,
/// remaining balls) at the same step are merged, keeping the best prefix.
pub fn exact_best_return(board: &BoardSpec, w: &PreferenceVector, gamma: f64, horizon: u32) -> Dyadic {
    type Key = (Pos, Dir, BallSet);
    let g = Dyadic::from_f64(gamma);
    let start = reset(board).unwrap();
    let mut layer: HashMap<Key, (State, Dyadic)> = HashMap::new();
    layer.insert((start.pos, start.dir, start.remaining), (start, Dyadic::zero()));
    let mut disc = Dyadic::from_f64(1.0);
    let mut best: Option<Dyadic> = None;
    for _ in 0..horizon {
        let mut next: HashMap<Key, (State, Dyadic)> = HashMap::new();
        for (s, v) in layer.values() {
            for a in Action::ALL {
                let (s2, ev) = step(s, a, board).unwrap();
                let v2 = v.add(&disc.mul(&event_reward(&ev, w)));
                if s2.terminated {
                    if best.as_ref().is_none_or(|b| v2 > *b) {
                        best = Some(v2);
                    }
                    continue;
                }
                let k = (s2.pos, s2.dir, s2.remaining);
                match next.get(&k) {
                    Some((_, old)) if *old >= v2 => {}
                    _ => {
                        next.insert(k, (s2, v2));
                    }
                }
            }
        }
        layer = next;
        disc = disc.mul(&g);
    }
    for (_, v) in layer.into_values() {
        if best.as_ref().is_none_or(|b| v > *b) {
            best = Some(v);
        }
    }
    best.expect("some sequence exists")
}

/// Boards of at most 4x4 cells with one or two balls.
pub fn small_boards(n: usize, seed: u64) -> Vec<BoardSpec> {
    let mut rng = rng_stream(seed, 11);
    (0..n)
        .map(|i| {
            let mut counts = [0u8; 3];
            for _ in 0..rng.gen_range(1..=2) {
                counts[rng.gen_range(0..3)] += 1;
            }
            let params = GenParams {
                width: rng.gen_range(2..=4),
                height: rng.gen_range(3..=4),
                blue: CountRange::exactly(counts[0]),
                green: CountRange::exactly(counts[1]),
                red: CountRange::exactly(counts[2]),
                lava: CountRange::between(0, 3),
                lava_patches: CountRange::between(1, 2),
            };
            generate_board_with(&mut rng, &params, &format!("small-{i}")).unwrap()
        })
        .collect()
}

/// Linear-scan reference for update selection: count agreements for every
/// neighbor, then take the first maximum in ascending id order.
pub fn reference_select(
    bank: &PolicyBank,
    current: PolicyId,
    log: &FeedbackLog,
    boards: &HashMap<String, BoardSpec>,
) -> PolicyId {
    let mut scored: Vec<(PolicyId, usize)> = Vec::new();
    for p in bank.policies() {
        if p.id() == current {
            continue;
        }
        if !bank.neighborhood(current).unwrap().iter().any(|q| q.id() == p.id()) {
            continue;
        }
        let mut agree = 0;
        for c in log.iter() {
            if p.act(&boards[&c.board_id], &c.state).unwrap() == c.preferred_action {
                agree += 1;
            }
        }
        scored.push((p.id(), agree));
    }
    scored.sort_by_key(|&(id, _)| id);
    let max = scored.iter().map(|&(_, a)| a).max().unwrap();
    scored.into_iter().find(|&(_, a)| a == max).unwrap().0
}
