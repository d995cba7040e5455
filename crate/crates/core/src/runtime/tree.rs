/// Children of `m` in the `b`-ary launch tree rooted at 0, restricted to `[0, p)`.
pub fn children(m: u32, b: u32, p: u32) -> Vec<u32> {
    let first = u64::from(m) * u64::from(b) + 1;
    (first..first + u64::from(b))
        .take_while(|&c| c < u64::from(p))
        .map(|c| c as u32)
        .collect()
}

pub fn parent(m: u32, b: u32) -> Option<u32> {
    (m > 0).then(|| (m - 1) / b)
}

/// Tree depth of `m` (the root is 0).
pub fn depth(mut m: u32, b: u32) -> u32 {
    let mut d = 0;
    while let Some(q) = parent(m, b) {
        m = q;
        d += 1;
    }
    d
}
