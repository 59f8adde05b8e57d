mod common;

use common::{exact_best_return, exact_return, small_boards, Dyadic};
use updatelab::gridworld::{rollout, MAX_STEPS};
use updatelab::policy::{default_bank, plan, DEFAULT_GAMMA};

#[test]
fn bank_rollouts_attain_exact_optimum_on_small_boards() {
    let bank = default_bank(DEFAULT_GAMMA).unwrap();
    for board in small_boards(12, 3) {
        for p in bank.policies() {
            let w = p.preferences();
            let got = exact_return(&rollout(p.as_ref(), &board).unwrap(), &w, DEFAULT_GAMMA);
            let best = exact_best_return(&board, &w, DEFAULT_GAMMA, MAX_STEPS);
            assert!(got == best, "{} on {}", p.id(), board.id());
        }
    }
}

#[test]
fn start_value_close_to_exact_optimum() {
    let bank = default_bank(DEFAULT_GAMMA).unwrap();
    for board in small_boards(6, 9) {
        for p in bank.policies() {
            let w = p.preferences();
            let v = plan(&board, &w, DEFAULT_GAMMA, MAX_STEPS).unwrap().start_value();
            let best = exact_best_return(&board, &w, DEFAULT_GAMMA, MAX_STEPS);
            let diff = Dyadic::from_f64(v).add(&Dyadic::from_f64(-1.0).mul(&best));
            let tol = Dyadic::from_f64(1e-9);
            assert!(diff <= tol && Dyadic::from_f64(-1e-9) <= diff, "{} on {}", p.id(), board.id());
        }
    }
}

#[test]
fn short_horizons_match_oracle() {
    let bank = default_bank(DEFAULT_GAMMA).unwrap();
    let board = &small_boards(1, 21)[0];
    for h in [1, 2, 5, 9] {
        for p in bank.policies() {
            let w = p.preferences();
            let v = plan(board, &w, DEFAULT_GAMMA, h).unwrap().start_value();
            let best = exact_best_return(board, &w, DEFAULT_GAMMA, h);
            let diff = Dyadic::from_f64(v).add(&Dyadic::from_f64(-1.0).mul(&best));
            assert!(diff <= Dyadic::from_f64(1e-12) && Dyadic::from_f64(-1e-12) <= diff);
        }
    }
}
