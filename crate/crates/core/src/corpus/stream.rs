use crate::tokenizer::EOS;

/// Joins pages with `</s>` separators and cuts the stream into consecutive
/// `context`-token windows; the trailing partial window is dropped.
pub fn build_lm_stream<'a, I>(pages: I, context: usize) -> Vec<Vec<u32>>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut stream = Vec::new();
    for (k, page) in pages.into_iter().enumerate() {
        if k > 0 {
            stream.push(EOS);
        }
        stream.extend_from_slice(page);
    }
    if context == 0 {
        return Vec::new();
    }
    stream.chunks_exact(context).map(<[u32]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_division() {
        let a: Vec<u32> = (0..600).collect();
        let b: Vec<u32> = (0..499).collect();
        let windows = build_lm_stream([a.as_slice(), b.as_slice()], 512);
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[1][600 - 512], EOS);
    }

    #[test]
    fn short_page_gives_nothing() {
        let a: Vec<u32> = (0..100).collect();
        assert!(build_lm_stream([a.as_slice()], 512).is_empty());
    }

    #[test]
    fn order_is_preserved() {
        let a: Vec<u32> = (10..40).collect();
        let windows = build_lm_stream([a.as_slice()], 7);
        let flat: Vec<u32> = windows.concat();
        assert_eq!(flat, a[..28].to_vec());
    }
}
