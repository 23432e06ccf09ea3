use gricnn_core::grid::*;

fn main() {
    let g = Grid2D::from_fn(11, |r, c| ((r * 13 + c * 5) % 17) as f64 * 0.21 - 1.3).unwrap();
    let r90 = Dih4Element::rotation(1);
    let a = AngleDeg::new(7, 1).unwrap();
    let lhs = rotate_bilinear(&r90.apply(&g), a, 17).unwrap();
    let rhs = r90.apply(&rotate_bilinear(&g, a, 17).unwrap());
    let mut count = 0;
    for r in 0..17 {
        for c in 0..17 {
            let l = lhs.get(r, c);
            let rr = rhs.get(r, c);
            if l.to_bits() != rr.to_bits() {
                count += 1;
                if count < 8 {
                    println!("r={r} c={c}: lhs={l:.20e} rhs={rr:.20e} diff={:.3e}", (l - rr).abs());
                }
            }
        }
    }
    println!("total mismatches: {count} / {}", 17 * 17);
}
