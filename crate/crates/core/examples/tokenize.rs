//! Code and title tokenization across the supported languages.

use code2title::corpus::{tokenize_code, tokenize_title, Lang};

fn main() {
    let snippets = [
        (
            Lang::Python,
            "# load it\ndata = json.loads('{\"a\": 1}')\nprint(data[\"a\"] + 2.5)",
        ),
        (Lang::Java, "int a=1; /*c*/ int b=2; // done\nString s = \"hi\";"),
        (Lang::Javascript, "const xs = [1, 2].map(x => x * 2); /* doubled */"),
        (Lang::Csharp, "var list = new List<int>(); list.Add(42); // add"),
        (Lang::Sql, "SELECT name FROM users WHERE age > 30 -- adults"),
    ];
    for (lang, code) in snippets {
        let t = tokenize_code(code, lang);
        println!("{lang:>10}: {}", t.tokens.join(" "));
        for w in t.warnings {
            println!("{:>10}  warning on line {}: {}", "", w.line, w.message);
        }
    }
    for title in [
        "How do I sort a dict by value in Python?",
        "C# vs. Java: which is faster?",
    ] {
        println!("{title:?} -> {:?}", tokenize_title(title));
    }
}
