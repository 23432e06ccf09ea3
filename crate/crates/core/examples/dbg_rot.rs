use gricnn_core::grid::*;

fn main() {
    let mut g = Grid2D::zeros(33).unwrap();
    g.set(16, 26, 1.0);
    let out = rotate_bilinear(&g, AngleDeg::from_int(30), 33).unwrap();
    for r in 0..33 {
        for c in 0..33 {
            let v = out.get(r, c);
            if v != 0.0 {
                println!("nonzero at r={r} c={c} v={v}");
            }
        }
    }
    println!("sum = {}", out.sum());
}
