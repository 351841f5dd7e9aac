use privgame::geo::*;
use privgame::harness::*;
use std::time::Instant;

#[test]
fn dbg_scenario1_cell_timing() {
    let config = ExperimentConfig {
        grid: Grid::new(8, 6, 6.0, 4.0).unwrap(),
        num_users: 1,
        seed: 1,
        trace_len: 400,
        smoothing: 0.0,
    };
    let t = Instant::now();
    let h = Harness::new(config).unwrap();
    eprintln!("harness setup {:?}", t.elapsed());
    for eps in [0.15, 0.9] {
        let t = Instant::now();
        let rows = h.scenario1(&[eps]).unwrap();
        eprintln!("scenario1 eps={eps}: {:?} status={}", t.elapsed(), rows[0].status);
        let (cj, cd) = (rows[0].cost_joint.unwrap(), rows[0].cost_eps.unwrap());
        eprintln!("  cost_eps={cd:.7} cost_joint={cj:.7} diff={:.2e}", (cj - cd).abs());
        eprintln!("  dm={:.6} ap_dm={:.6}", rows[0].d_m.unwrap(), rows[0].ap_opt_dm.unwrap());
    }
}
