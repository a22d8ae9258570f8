#![no_main]

use libfuzzer_sys::fuzz_target;
use sidgen_core::sid_index::TokenKind;
use sidgen_core::TokenSpace;

fuzz_target!(|input: (u16, u8, u8, u32)| {
    let (k, m, topics, token) = input;
    let Ok(ts) = TokenSpace::new(k as usize, m as usize, vec!["en".into(), "sv".into()], topics as usize) else {
        return;
    };
    match ts.decode(token) {
        Some(TokenKind::Sid { level, code }) => assert_eq!(ts.sid_token(level, code), token),
        Some(_) => assert!((token as usize) < ts.len()),
        None => assert!(token as usize >= ts.len()),
    }
});
