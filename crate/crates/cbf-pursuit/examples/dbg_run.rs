// Final preset verification probe
use cbf_pursuit::*;

fn main() {
    for name in ["circle", "figure8"] {
        let sc = preset(name).unwrap();
        let log = run(&sc).unwrap();
        let m = metrics(&log);
        let max_kkt = log.records.iter().map(|r| r.kkt_stat.max(r.kkt_comp)).fold(0.0f64, f64::max);
        let worst_contain = log.records.iter().map(|r| {
            ((r.theta_hat[0] - 1.0).abs() - r.nu_bar).max((r.xi_hat - 1.0).abs() - r.eta_bar)
        }).fold(f64::NEG_INFINITY, f64::max);
        let last = log.records.last().unwrap();
        println!("== {name}: wall {:.4}s viol {} relax_events {}", m.wall_seconds, m.violations, log.relax_events.len());
        println!("   mins: h_s {:?} h_c {:?} h_u {:?}", m.min_h_s, m.min_h_c, m.min_h_u);
        println!("   max kkt {max_kkt:.2e}; containment slack {worst_contain:.2e}; final theta_err {:.2e}; nu_final {:.2e}",
            (last.theta_hat[0] - 1.0).abs(), last.nu_bar);
        let nominal = nominal_only_run(&sc).unwrap();
        let mn = metrics(&nominal);
        println!("   nominal-only viol {} (h_c min {:.3}, h_s min {:.3})", mn.violations,
            mn.min_h_c.iter().cloned().fold(f64::INFINITY, f64::min),
            mn.min_h_s.iter().cloned().fold(f64::INFINITY, f64::min));
    }
}
