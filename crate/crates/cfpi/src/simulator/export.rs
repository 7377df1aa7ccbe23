//! CSV export of ground truth and per-step estimates.

use std::io::Write;

use serde::Serialize;

use crate::manifold::ImuState;

#[derive(Serialize)]
struct TruthRow {
    t: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
    px: f64,
    py: f64,
    pz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    bwx: f64,
    bwy: f64,
    bwz: f64,
    bax: f64,
    bay: f64,
    baz: f64,
}

/// Writes `t, qx..qw, px..pz, vx..vz, bwx..bwz, bax..baz` rows.
pub fn write_truth_csv<W: Write>(out: W, rows: impl IntoIterator<Item = (f64, ImuState)>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (t, x) in rows {
        let q = x.q.coords();
        w.serialize(TruthRow {
            t,
            qx: q.x,
            qy: q.y,
            qz: q.z,
            qw: q.w,
            px: x.p.x,
            py: x.p.y,
            pz: x.p.z,
            vx: x.v.x,
            vy: x.v.y,
            vz: x.v.z,
            bwx: x.bg.x,
            bwy: x.bg.y,
            bwz: x.bg.z,
            bax: x.ba.x,
            bay: x.ba.y,
            baz: x.ba.z,
        })?;
    }
    w.flush()?;
    Ok(())
}
