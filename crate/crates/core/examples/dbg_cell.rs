// Standalone replication of the canonical cell transform to find the bug.
fn eval(fu: f64, fv: f64, vals: [f64; 4]) -> f64 {
    let t00 = ((1.0 - fu) * (1.0 - fv)) * vals[0];
    let t01 = ((1.0 - fu) * fv) * vals[1];
    let t10 = (fu * (1.0 - fv)) * vals[2];
    let t11 = (fu * fv) * vals[3];
    (t00 + t01) + (t10 + t11)
}

fn main() {
    let fu = 0.3125f64;
    let fv = 0.71875f64;
    let vals = [1.0, 2.0, 3.0, 4.0];
    let base = eval(fu, fv, vals);
    for swap in [false, true] {
        let (su, sv) = if swap { (fv, fu) } else { (fu, fv) };
        for flip_u in [false, true] {
            let gu = if flip_u { 1.0 - su } else { su };
            for flip_v in [false, true] {
                let gv = if flip_v { 1.0 - sv } else { sv };
                let mut cand = [0.0f64; 4];
                for (slot, val) in cand.iter_mut().enumerate() {
                    let a = slot / 2;
                    let b = slot % 2;
                    let ap = if flip_u { 1 - a } else { a };
                    let bp = if flip_v { 1 - b } else { b };
                    let (oa, ob) = if swap { (bp, ap) } else { (ap, bp) };
                    *val = vals[oa * 2 + ob];
                }
                let got = eval(gu, gv, cand);
                println!(
                    "swap={swap:5} fu_flip={flip_u:5} fv_flip={flip_v:5} -> {got:.6} (base {base:.6}) diff {:.2e}",
                    (got - base).abs()
                );
            }
        }
    }
}
