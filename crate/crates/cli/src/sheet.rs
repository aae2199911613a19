use meshsplat::maskmap::NodeKey;
use meshsplat::Image;

/// Lays out before/after renders per node: frames run down in row pairs
/// (before above after), cameras run across. Cells without a node stay black.
pub fn contact_sheet(nodes: &[NodeKey], before: &[Image], after: &[Image]) -> Image {
    let mut times: Vec<usize> = nodes.iter().map(|n| n.t).collect();
    let mut poses: Vec<usize> = nodes.iter().map(|n| n.p).collect();
    times.sort_unstable();
    times.dedup();
    poses.sort_unstable();
    poses.dedup();
    let (w, h) = before
        .iter()
        .chain(after)
        .fold((0, 0), |(w, h), img| (w.max(img.width), h.max(img.height)));
    let mut sheet = Image::new(w * poses.len(), 2 * h * times.len());
    for (k, node) in nodes.iter().enumerate() {
        let col = poses.binary_search(&node.p).expect("pose listed");
        let row = times.binary_search(&node.t).expect("time listed");
        for (half, img) in [&before[k], &after[k]].into_iter().enumerate() {
            let (x0, y0) = (col * w, (2 * row + half) * h);
            for y in 0..img.height {
                for x in 0..img.width {
                    sheet.set(x0 + x, y0 + y, img.get(x, y));
                }
            }
        }
    }
    sheet
}
