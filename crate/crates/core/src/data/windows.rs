use super::corpus::{Corpus, Split, DEFAULT_FPS};

pub const DEFAULT_WINDOW: usize = 16;

/// `T` frame indices drawn from one video, in increasing order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub video: usize,
    pub frames: Vec<usize>,
}

/// Cuts valid frame indices into windows of length `t`.
///
/// Training uses dilation `n` with every offset `0..n`, so each valid frame
/// lands in at most one window. Validation and test use consecutive frames
/// whatever `n` is. Trailing remainders shorter than `t` are dropped.
pub fn window_sequences(valid: &[usize], t: usize, n: usize, split: Split) -> Vec<Vec<usize>> {
    if t == 0 {
        return Vec::new();
    }
    let n = if split == Split::Train { n.max(1) } else { 1 };
    let mut out = Vec::new();
    for offset in 0..n {
        let stream: Vec<usize> = valid.iter().skip(offset).step_by(n).copied().collect();
        out.extend(stream.chunks_exact(t).map(<[usize]>::to_vec));
    }
    out
}

/// Seconds of video spanned by a window of `t` frames at dilation `n`.
pub fn temporal_context(n: usize, t: usize) -> f64 {
    n as f64 / DEFAULT_FPS * t as f64
}

/// Windows of every video in `split`, in manifest order.
pub fn corpus_windows(corpus: &Corpus, split: Split, t: usize, n: usize) -> Vec<Window> {
    corpus
        .split(split)
        .flat_map(|(vi, video)| {
            window_sequences(&video.valid_frames(), t, n, split)
                .into_iter()
                .map(move |frames| Window { video: vi, frames })
        })
        .collect()
}
