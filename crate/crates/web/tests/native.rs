use greflect_web::{gheat_profile_native, reflected_path_native, upper_expectation_native};

#[test]
fn reflected_path_blocks() {
    let out = reflected_path_native(0.5, 0.0, "-x", "1", 1.0, 1.0, 200, 3).unwrap();
    assert_eq!(out.len(), 4 * 201);
    let (t, x, k) = (&out[..201], &out[402..603], &out[603..]);
    assert_eq!((t[0], t[200]), (0.0, 1.0));
    assert!(x.iter().all(|&v| v >= 0.0));
    assert_eq!(k[0], 0.0);
    assert!(k.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(out, reflected_path_native(0.5, 0.0, "-x", "1", 1.0, 1.0, 200, 3).unwrap());
}

#[test]
fn reflected_path_rejects_bad_input() {
    assert!(reflected_path_native(0.0, 1.0, "0", "1", 1.0, 1.0, 10, 0).is_err());
    assert!(reflected_path_native(0.5, 0.0, "y", "1", 1.0, 1.0, 10, 0).is_err());
}

#[test]
fn gheat_profile_of_convex_payoff() {
    let out = gheat_profile_native("x*x", 0.25, 1.0, 6.0, 300).unwrap();
    let u = &out[301..];
    assert!((u[150] - 1.0).abs() < 1e-2, "{}", u[150]);
}

#[test]
fn upper_expectation_matches_pde() {
    let r = upper_expectation_native("-x*x", 0.25, 3, 4000, 7).unwrap();
    assert_eq!(r.len(), 7);
    assert!((r[3] + 0.25).abs() < 1e-2);
    assert!((r[0] - r[3]).abs() < 4.0 * r[1] + 2e-2, "{r:?}");
    assert!(r[2] <= r[0]);
}
