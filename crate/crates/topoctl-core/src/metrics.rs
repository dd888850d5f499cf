//! Per-TC-run measurement records, the scope/incrementality metrics,
//! CSV and JSON output, and the boundedness micro-benchmarks.

use serde::Serialize;

use crate::handler;
use crate::ktc::{self, KtcOptions};
use crate::topology::{LinkState, ModificationCause, Topology};

/// Counts of context events applied in one TC run's batch.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CeCounts {
    pub node_add: usize,
    pub node_rm: usize,
    pub link_add: usize,
    pub link_rm: usize,
    pub weight_mod: usize,
}

impl CeCounts {
    pub fn total(&self) -> usize {
        self.node_add + self.node_rm + self.link_add + self.link_rm + self.weight_mod
    }
}

/// One row of the measurement stream: everything recorded for one TC
/// run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub run_index: usize,
    pub sim_time_s: u64,
    pub alive_nodes: usize,
    pub ce: CeCounts,
    /// Link state modifications during CE handling.
    pub lsm_ce: usize,
    /// Link state modifications during the TC invocation.
    pub lsm_tc: usize,
    /// lsm_ce + lsm_tc.
    pub scope: usize,
    /// Average node out-degree of the real link-layer topology; absent
    /// when there are no nodes.
    pub avg_out_degree: Option<f64>,
    /// scope / avg_out_degree; absent when the degree is zero.
    pub degnorm_scope: Option<f64>,
    /// LSMs of the incremental run (CE handling + TC), both-mode only.
    pub lsm_iktc: Option<usize>,
    /// LSMs of the batch run on the mirror, both-mode only.
    pub lsm_bktc: Option<usize>,
    /// lsm_iktc / lsm_bktc; absent when the denominator is zero.
    pub ratio: Option<f64>,
    pub weak_ok: Option<bool>,
    pub strong_ok: Option<bool>,
    pub tc_wall_ns: u64,
    pub check_wall_ns: u64,
    pub sim_wall_ns: u64,
}

pub const CSV_HEADER: &str = "run_index,sim_time_s,alive_nodes,ce_node_add,ce_node_rm,ce_link_add,ce_link_rm,ce_weight_mod,lsm_ce,lsm_tc,scope,avg_out_degree,degnorm_scope,lsm_iktc,lsm_bktc,ratio,weak_ok,strong_ok,tc_wall_ns,check_wall_ns,sim_wall_ns";

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_bool(v: Option<bool>) -> String {
    v.map(|x| if x { "1" } else { "0" }.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_index,
            self.sim_time_s,
            self.alive_nodes,
            self.ce.node_add,
            self.ce.node_rm,
            self.ce.link_add,
            self.ce.link_rm,
            self.ce.weight_mod,
            self.lsm_ce,
            self.lsm_tc,
            self.scope,
            fmt_opt_f64(self.avg_out_degree),
            fmt_opt_f64(self.degnorm_scope),
            fmt_opt_usize(self.lsm_iktc),
            fmt_opt_usize(self.lsm_bktc),
            fmt_opt_f64(self.ratio),
            fmt_opt_bool(self.weak_ok),
            fmt_opt_bool(self.strong_ok),
            self.tc_wall_ns,
            self.check_wall_ns,
            self.sim_wall_ns
        )
    }
}

/// Raw inputs for one row.
#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    pub run_index: usize,
    pub sim_time_s: u64,
    pub alive_nodes: usize,
    pub ce: CeCounts,
    pub lsm_ce: usize,
    pub lsm_tc: usize,
    pub node_count: usize,
    pub link_count: usize,
    pub lsm_bktc: Option<usize>,
    pub weak_ok: Option<bool>,
    pub strong_ok: Option<bool>,
    pub tc_wall_ns: u64,
    pub check_wall_ns: u64,
    pub sim_wall_ns: u64,
}

/// Assembles a row; division guards make the ratio and the normalized
/// scope absent instead of dividing by zero.
pub fn compute_run_metrics(inputs: &RunInputs) -> RunMetrics {
    let scope = inputs.lsm_ce + inputs.lsm_tc;
    let avg_out_degree = if inputs.node_count > 0 {
        Some(inputs.link_count as f64 / inputs.node_count as f64)
    } else {
        None
    };
    let degnorm_scope = match avg_out_degree {
        Some(d) if d > 0.0 => Some(scope as f64 / d),
        _ => None,
    };
    let lsm_iktc = inputs.lsm_bktc.map(|_| scope);
    let ratio = match (lsm_iktc, inputs.lsm_bktc) {
        (Some(i), Some(b)) if b > 0 => Some(i as f64 / b as f64),
        _ => None,
    };
    RunMetrics {
        run_index: inputs.run_index,
        sim_time_s: inputs.sim_time_s,
        alive_nodes: inputs.alive_nodes,
        ce: inputs.ce,
        lsm_ce: inputs.lsm_ce,
        lsm_tc: inputs.lsm_tc,
        scope,
        avg_out_degree,
        degnorm_scope,
        lsm_iktc,
        lsm_bktc: inputs.lsm_bktc,
        ratio,
        weak_ok: inputs.weak_ok,
        strong_ok: inputs.strong_ok,
        tc_wall_ns: inputs.tc_wall_ns,
        check_wall_ns: inputs.check_wall_ns,
        sim_wall_ns: inputs.sim_wall_ns,
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean).powi(2);
        dy += (ry[i] - mean).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = rank;
        }
        i = j + 1;
    }
    out
}

/// Per-configuration aggregate written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigSummary {
    pub config: String,
    pub seeds: Vec<u64>,
    pub runs_per_seed: usize,
    pub total_lsm_ce: usize,
    pub total_lsm_tc: usize,
    /// TC runs with a nonzero CE batch.
    pub runs_with_ces: usize,
    /// ... of which the incremental variant needed fewer LSMs than batch.
    pub incremental_wins: usize,
    /// Arithmetic mean of the ratio at each time point across seeds.
    pub mean_ratio_per_run: Vec<Option<f64>>,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub final_alive_mean: f64,
}

pub fn summarize(config: &str, seeds: &[u64], per_seed_rows: &[Vec<RunMetrics>], sent: u64, dropped: u64) -> ConfigSummary {
    let runs_per_seed = per_seed_rows.first().map_or(0, |r| r.len());
    let mut total_lsm_ce = 0;
    let mut total_lsm_tc = 0;
    let mut runs_with_ces = 0;
    let mut incremental_wins = 0;
    for rows in per_seed_rows {
        for r in rows {
            total_lsm_ce += r.lsm_ce;
            total_lsm_tc += r.lsm_tc;
            if r.ce.total() > 0 {
                runs_with_ces += 1;
                if let (Some(i), Some(b)) = (r.lsm_iktc, r.lsm_bktc) {
                    if i < b {
                        incremental_wins += 1;
                    }
                }
            }
        }
    }
    let mut mean_ratio_per_run = Vec::with_capacity(runs_per_seed);
    for i in 0..runs_per_seed {
        let vals: Vec<f64> = per_seed_rows.iter().filter_map(|rows| rows.get(i).and_then(|r| r.ratio)).collect();
        mean_ratio_per_run.push(if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        });
    }
    let final_alive: Vec<f64> =
        per_seed_rows.iter().filter_map(|rows| rows.last().map(|r| r.alive_nodes as f64)).collect();
    ConfigSummary {
        config: config.to_string(),
        seeds: seeds.to_vec(),
        runs_per_seed,
        total_lsm_ce,
        total_lsm_tc,
        runs_with_ces,
        incremental_wins,
        mean_ratio_per_run,
        messages_sent: sent,
        messages_dropped: dropped,
        final_alive_mean: if final_alive.is_empty() {
            0.0
        } else {
            final_alive.iter().sum::<f64>() / final_alive.len() as f64
        },
    }
}

// ---------------------------------------------------------------------
// Boundedness micro-benchmarks
// ---------------------------------------------------------------------

/// Observed cost of handling one scripted context event, against the
/// theoretical boundedness expectation.
#[derive(Debug, Clone, Serialize)]
pub struct BoundednessRecord {
    pub ce_type: String,
    pub handling_lsm: usize,
    pub tc_lsm: usize,
    pub handling_bounded: bool,
    pub tc_bounded: bool,
    pub note: String,
}

/// A chain of `n` nested witnessing triangles: inactive link `e_i` is
/// witnessed only by (`e_{i-1}`, filler), with `e_0` an active base
/// link. Removing the base cascades through all `n` inactive links.
pub fn cascade_gadget(n: usize, k: f64) -> (Topology, crate::topology::LinkId) {
    use ModificationCause::TcInvocation as Tc;
    let mut t = Topology::new();
    let x = t.add_node();
    let y = t.add_node();
    let base = t.add_link(x, y, 1.0).unwrap();
    t.set_state(base, LinkState::Active, Tc).unwrap();
    let mut prev_tgt = y;
    let mut prev_weight = 1.0f64;
    for _ in 0..n {
        // inactive link x -> z_i witnessed by (x -> prev_tgt, prev_tgt -> z_i)
        let z = t.add_node();
        let filler = t.add_link(prev_tgt, z, 1.0).unwrap();
        t.set_state(filler, LinkState::Active, Tc).unwrap();
        let w = (prev_weight + 0.5).max(k * 1.0);
        let g = t.add_link(x, z, w).unwrap();
        t.set_state(g, LinkState::Inactive, Tc).unwrap();
        prev_tgt = z;
        prev_weight = w;
    }
    (t, base)
}

/// Runs the scripted single-CE scenarios of the boundedness table:
/// node addition/removal cost nothing, link addition costs nothing
/// during handling, link removal (and weight modification) can cascade
/// arbitrarily via the gadget.
pub fn micro_boundedness_suite(k: f64, gadget_len: usize) -> Vec<BoundednessRecord> {
    let mut out = Vec::new();

    // node addition on a classified triangle
    {
        let mut t = classified_triangle(k);
        let before = t.journal_len();
        t.insert_node(crate::topology::NodeId(50)).unwrap();
        let handling = t.journal_len() - before;
        let report = ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        out.push(BoundednessRecord {
            ce_type: "node-addition".into(),
            handling_lsm: handling,
            tc_lsm: report.lsm_count,
            handling_bounded: true,
            tc_bounded: true,
            note: "isolated node, no link state touched".into(),
        });
    }
    // node removal of an isolated node
    {
        let mut t = classified_triangle(k);
        let iso = t.add_node();
        let before = t.journal_len();
        t.remove_node(iso).unwrap();
        let handling = t.journal_len() - before;
        let report = ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        out.push(BoundednessRecord {
            ce_type: "node-removal".into(),
            handling_lsm: handling,
            tc_lsm: report.lsm_count,
            handling_bounded: true,
            tc_bounded: true,
            note: "isolated node, no link state touched".into(),
        });
    }
    // link addition
    {
        let mut t = classified_triangle(k);
        let n = t.add_node();
        let before = t.journal_len();
        handler::handle_context_event(
            &mut t,
            &crate::topology::ContextEvent::LinkAddition { src: crate::topology::NodeId(0), tgt: n, weight: 1.0 },
            k,
        )
        .unwrap();
        let handling = t.journal_len() - before;
        let report = ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        out.push(BoundednessRecord {
            ce_type: "link-addition".into(),
            handling_lsm: handling,
            tc_lsm: report.lsm_count,
            handling_bounded: true,
            tc_bounded: false,
            note: "new link enters unclassified; TC may cascade".into(),
        });
    }
    // link removal on the cascade gadget
    {
        let (mut t, base) = cascade_gadget(gadget_len, k);
        let before = t.journal_len();
        handler::handle_link_removal(&mut t, base, k).unwrap();
        let handling = t.journal_len() - before;
        let report = ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        out.push(BoundednessRecord {
            ce_type: "link-removal".into(),
            handling_lsm: handling,
            tc_lsm: report.lsm_count,
            handling_bounded: false,
            tc_bounded: false,
            note: format!("gadget of {gadget_len} nested witnesses cascades linearly"),
        });
    }
    // weight modification on the gadget's base link
    {
        let (mut t, base) = cascade_gadget(gadget_len, k);
        let before = t.journal_len();
        handler::handle_weight_modification(&mut t, base, 0.9, k).unwrap();
        let handling = t.journal_len() - before;
        let report = ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
        out.push(BoundednessRecord {
            ce_type: "weight-modification".into(),
            handling_lsm: handling,
            tc_lsm: report.lsm_count,
            handling_bounded: false,
            tc_bounded: false,
            note: format!("gadget of {gadget_len} nested witnesses cascades linearly"),
        });
    }
    out
}

pub fn render_boundedness(records: &[BoundednessRecord]) -> String {
    let mut out = String::from("ce_type\thandling_lsm\ttc_lsm\thandling_bounded\ttc_bounded\tnote\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.ce_type, r.handling_lsm, r.tc_lsm, r.handling_bounded, r.tc_bounded, r.note
        ));
    }
    out
}

fn classified_triangle(k: f64) -> Topology {
    let mut t = Topology::new();
    let a = t.add_node();
    let b = t.add_node();
    let c = t.add_node();
    t.add_link(a, b, 4.0).unwrap();
    t.add_link(b, a, 4.0).unwrap();
    t.add_link(a, c, 1.0).unwrap();
    t.add_link(c, a, 1.0).unwrap();
    t.add_link(c, b, 2.0).unwrap();
    t.add_link(b, c, 2.0).unwrap();
    ktc::incremental_ktc(&mut t, &KtcOptions::new(k)).unwrap();
    t
}
