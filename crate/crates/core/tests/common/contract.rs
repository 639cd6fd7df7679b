use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use webalign_core::tokenizer::{
    build_vocab, tokenize, Segment, Vocab, WebpageContent, DEFAULT_MAX_LEN, FIELD_SEP,
};
use webalign_core::Error;

pub fn vocab() -> Vocab {
    let seed_pages = [
        WebpageContent::new(
            "https://news.example.com/world/ab-cd",
            "ab cd ef",
            "gh ij kl, mn!",
        )
        .unwrap(),
        WebpageContent::new("https://blog.example.org/x/y", "ef gh", "ab ab op qr").unwrap(),
    ];
    build_vocab(&seed_pages, 1).unwrap()
}

const WORDS: [&str; 16] = [
    "ab", "cd", "ef", "gh", "ij", "kl", "mn", "op", "qr", "zz", "Ab", "q7", ",", "!", "?", "x-y",
];

fn words(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 0..max).prop_map(|w| w.join(" "))
}

pub fn content() -> impl Strategy<Value = WebpageContent> {
    let url = prop::collection::vec(prop::sample::select(&WORDS[..10]), 1..170);
    (url, words(120), words(260)).prop_map(|(u, t, d)| {
        WebpageContent::new(format!("https://{}", u.join("/")), t, d).unwrap()
    })
}

/// Checks one content against the truncation contract at the default length.
pub fn check(c: &WebpageContent, v: &Vocab) -> Result<(), TestCaseError> {
    let full = tokenize(c, v, 100_000).unwrap();
    let url = full.segment_ids(Segment::Url);
    let title = full.segment_ids(Segment::Title);
    let desc = full.segment_ids(Segment::Desc);
    match tokenize(c, v, DEFAULT_MAX_LEN) {
        Err(Error::ContentTooLong { tokens, limit }) => {
            prop_assert_eq!(tokens, url.len());
            prop_assert!(url.len() > DEFAULT_MAX_LEN - 2);
            prop_assert_eq!(limit, DEFAULT_MAX_LEN - 2);
        }
        Err(e) => prop_assert!(false, "unexpected error {e}"),
        Ok(out) => {
            prop_assert!(out.len() <= DEFAULT_MAX_LEN);
            prop_assert_eq!(out.ids.len(), out.segments.len());
            prop_assert_eq!(out.segment_ids(Segment::Url), url.clone());
            if full.len() <= DEFAULT_MAX_LEN {
                prop_assert_eq!(&out, &full);
            }
            if url.len() + title.len() + 4 <= DEFAULT_MAX_LEN {
                prop_assert_eq!(out.segment_ids(Segment::Title), title);
                let kept = out.segment_ids(Segment::Desc);
                prop_assert!(desc.starts_with(&kept));
                prop_assert_eq!(out.ids.iter().filter(|&&id| id == FIELD_SEP).count(), 2);
                prop_assert_eq!(out.len(), full.len().min(DEFAULT_MAX_LEN));
            }
        }
    }
    Ok(())
}
