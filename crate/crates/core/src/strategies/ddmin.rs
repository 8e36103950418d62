use std::collections::HashMap;

/// Delta debugging over item indices `0..n` with split factor 2.
///
/// `test` receives a sorted subset and reports whether it still triggers.
/// The full set is assumed to trigger and the empty set not to. Results
/// are memoised, so `test` runs at most once per distinct subset. The
/// returned subset is 1-minimal: dropping any single index breaks it.
pub fn ddmin<E>(
    n: usize,
    mut test: impl FnMut(&[usize]) -> Result<bool, E>,
) -> Result<Vec<usize>, E> {
    let mut cache: HashMap<Vec<usize>, bool> = HashMap::new();
    let mut check = |subset: &[usize]| -> Result<bool, E> {
        if let Some(&hit) = cache.get(subset) {
            return Ok(hit);
        }
        let hit = test(subset)?;
        cache.insert(subset.to_vec(), hit);
        Ok(hit)
    };

    let mut current: Vec<usize> = (0..n).collect();
    let mut granularity = 2;
    while current.len() >= 2 {
        let chunks = split(&current, granularity);
        let mut reduced = false;

        for chunk in &chunks {
            if check(chunk)? {
                current = chunk.clone();
                granularity = 2;
                reduced = true;
                break;
            }
        }
        if !reduced && chunks.len() > 2 {
            for i in 0..chunks.len() {
                let complement: Vec<usize> = chunks
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .flat_map(|(_, c)| c.iter().copied())
                    .collect();
                if check(&complement)? {
                    current = complement;
                    granularity = (granularity - 1).max(2);
                    reduced = true;
                    break;
                }
            }
        }
        if !reduced {
            if granularity >= current.len() {
                break;
            }
            granularity = (granularity * 2).min(current.len());
        }
    }
    Ok(current)
}

/// `granularity` contiguous chunks whose sizes differ by at most one.
fn split(items: &[usize], granularity: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    let k = granularity.min(n);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let end = start + (n - start) / (k - i);
        out.push(items[start..end].to_vec());
        start = end;
    }
    out
}
