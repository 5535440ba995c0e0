/// 4-connected component labeling over equal values. Component ids are
/// assigned by row-major discovery order; returns (component id per pixel,
/// component count).
pub fn label_components<T: PartialEq + Copy>(values: &[T], height: usize, width: usize) -> (Vec<u32>, usize) {
    assert_eq!(values.len(), height * width);
    let mut comp = vec![u32::MAX; values.len()];
    let mut count = 0u32;
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..values.len() {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = count;
        count += 1;
        comp[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let y = p / width;
            let x = p % width;
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && values[q] == values[p] {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
    }
    (comp, count as usize)
}
