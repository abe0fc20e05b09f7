//! The 96-entry picture-naming phrase list recordings are drawn from.
//!
//! Entries repeat: several phrases are elicited more than once at different
//! positions in the session, and each elicitation has its own id.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Phrase {
    pub id: &'static str,
    pub text: &'static str,
    pub romanization: &'static str,
    pub translation: &'static str,
}

pub const PHRASE_COUNT: usize = 96;

pub static PHRASES: [Phrase; PHRASE_COUNT] = [
    Phrase { id: "P01", text: "布丁", romanization: "Bùdīng", translation: "pudding" },
    Phrase { id: "P02", text: "麵包", romanization: "miànbāo", translation: "bread" },
    Phrase { id: "P03", text: "大白菜", romanization: "dàbáicài", translation: "Chinese cabbage" },
    Phrase { id: "P04", text: "螃蟹", romanization: "pángxiè", translation: "Crab" },
    Phrase { id: "P05", text: "奶瓶", romanization: "nǎipíng", translation: "baby bottle" },
    Phrase { id: "P06", text: "蓮蓬頭", romanization: "liánpengtóu", translation: "shower head" },
    Phrase { id: "P07", text: "帽子", romanization: "màozi", translation: "hat" },
    Phrase { id: "P08", text: "玉米", romanization: "yùmǐ", translation: "corn" },
    Phrase { id: "P09", text: "捉迷藏", romanization: "zhuōmícáng", translation: "hide and seek" },
    Phrase { id: "P10", text: "鳳梨", romanization: "fènglí", translation: "pineapple" },
    Phrase { id: "P11", text: "衣服", romanization: "yīfú", translation: "clothing" },
    Phrase { id: "P12", text: "吹風機", romanization: "chuīfēngjī", translation: "hair dryer" },
    Phrase { id: "P13", text: "動物", romanization: "dòngwù", translation: "animal" },
    Phrase { id: "P14", text: "蝴蝶", romanization: "húdié", translation: "Butterfly" },
    Phrase { id: "P15", text: "看電視", romanization: "kàndiànshì", translation: "watch TV" },
    Phrase { id: "P16", text: "太陽", romanization: "tàiyáng", translation: "Sun" },
    Phrase { id: "P17", text: "枕頭", romanization: "zhěntou", translation: "Pillow" },
    Phrase { id: "P18", text: "一條魚", romanization: "yītiáoyú", translation: "a fish" },
    Phrase { id: "P19", text: "鈕扣", romanization: "niǔkòu", translation: "button" },
    Phrase { id: "P20", text: "電腦", romanization: "diànnǎo", translation: "computer" },
    Phrase { id: "P21", text: "喝奶昔", romanization: "hēnǎixī", translation: "drink milkshake" },
    Phrase { id: "P22", text: "老虎", romanization: "lǎohǔ", translation: "Tiger" },
    Phrase { id: "P23", text: "恐龍", romanization: "kǒnglóng", translation: "Dinosaur" },
    Phrase { id: "P24", text: "養樂多", romanization: "yǎnglèduō", translation: "Yakult" },
    Phrase { id: "P25", text: "果凍", romanization: "guǒdòng", translation: "jelly" },
    Phrase { id: "P26", text: "烏龜", romanization: "wūguī", translation: "tortoise" },
    Phrase { id: "P27", text: "去公園", romanization: "qùgōngyuán", translation: "go to the park" },
    Phrase { id: "P28", text: "筷子", romanization: "kuàizi", translation: "Chopsticks" },
    Phrase { id: "P29", text: "貝殼", romanization: "bèiké", translation: "shell" },
    Phrase { id: "P30", text: "巧克力", romanization: "qiǎokèlì", translation: "chocolate" },
    Phrase { id: "P31", text: "漢堡", romanization: "hànbǎo", translation: "hamburger" },
    Phrase { id: "P32", text: "大海", romanization: "dàhǎi", translation: "the sea" },
    Phrase { id: "P33", text: "救護車", romanization: "jiùhùchē", translation: "ambulance" },
    Phrase { id: "P34", text: "膠帶", romanization: "jiāodài", translation: "adhesive tape" },
    Phrase { id: "P35", text: "果醬", romanization: "guǒjiàng", translation: "jam" },
    Phrase { id: "P36", text: "指甲刀", romanization: "zhǐjiǎdāo", translation: "nail clippers" },
    Phrase { id: "P37", text: "鉛筆", romanization: "qiānbǐ", translation: "pencil" },
    Phrase { id: "P38", text: "鋼琴", romanization: "gāngqín", translation: "piano" },
    Phrase { id: "P39", text: "中秋節", romanization: "zhōngqiūjié", translation: "Mid-Autumn Festival" },
    Phrase { id: "P40", text: "信封", romanization: "xìnfēng", translation: "envelope" },
    Phrase { id: "P41", text: "點心", romanization: "diǎnxīn", translation: "dessert" },
    Phrase { id: "P42", text: "口香糖", romanization: "kǒuxiāngtáng", translation: "chewing gum" },
    Phrase { id: "P43", text: "站牌", romanization: "zhànpái", translation: "stop sign" },
    Phrase { id: "P44", text: "蠟燭", romanization: "làzhú", translation: "Candle" },
    Phrase { id: "P45", text: "擦桌子", romanization: "cāzhuōzi", translation: "wipe the table" },
    Phrase { id: "P46", text: "抽屜", romanization: "chōutì", translation: "drawer" },
    Phrase { id: "P47", text: "警察", romanization: "jǐngchá", translation: "Policemen" },
    Phrase { id: "P48", text: "柳橙汁", romanization: "liǔchéngzhī", translation: "orange juice" },
    Phrase { id: "P49", text: "閃電", romanization: "shǎndiàn", translation: "lightning" },
    Phrase { id: "P50", text: "牙刷", romanization: "yáshuā", translation: "toothbrush" },
    Phrase { id: "P51", text: "直升機", romanization: "zhíshēngjī", translation: "helicopter" },
    Phrase { id: "P52", text: "日歷", romanization: "rìlì", translation: "calendar" },
    Phrase { id: "P53", text: "超人", romanization: "chāorén", translation: "superman" },
    Phrase { id: "P54", text: "大榕樹", romanization: "dàróngshù", translation: "Large banyan" },
    Phrase { id: "P55", text: "走路", romanization: "zǒulù", translation: "walk" },
    Phrase { id: "P56", text: "洗澡", romanization: "xǐzǎo", translation: "bath" },
    Phrase { id: "P57", text: "水族箱", romanization: "shuǐzúxiāng", translation: "aquarium" },
    Phrase { id: "P58", text: "草莓", romanization: "cǎoméi", translation: "Strawberry" },
    Phrase { id: "P59", text: "洋蔥", romanization: "yángcōng", translation: "onion" },
    Phrase { id: "P60", text: "上廁所", romanization: "shàngcèsuǒ", translation: "To the restroom" },
    Phrase { id: "P61", text: "掃把", romanization: "sàobǎ", translation: "broom" },
    Phrase { id: "P62", text: "垃圾", romanization: "lèsè", translation: "Rubbish" },
    Phrase { id: "P63", text: "去散步", romanization: "qùsànbù", translation: "go for a walk" },
    Phrase { id: "P64", text: "衣服", romanization: "yīfú", translation: "clothing" },
    Phrase { id: "P65", text: "果醬", romanization: "guǒjiàng", translation: "jam" },
    Phrase { id: "P66", text: "指甲刀", romanization: "zhǐjiǎdāo", translation: "nail clippers" },
    Phrase { id: "P67", text: "筷子", romanization: "kuàizi", translation: "Chopsticks" },
    Phrase { id: "P68", text: "烏龜", romanization: "wūguī", translation: "tortoise" },
    Phrase { id: "P69", text: "去公園", romanization: "qùgōngyuán", translation: "go to the park" },
    Phrase { id: "P70", text: "杜鵑花", romanization: "dùjuānhuā", translation: "Rhododendron" },
    Phrase { id: "P71", text: "選擇", romanization: "xuǎnzé", translation: "choose" },
    Phrase { id: "P72", text: "缺點", romanization: "quēdiǎn", translation: "shortcoming" },
    Phrase { id: "P73", text: "太陽", romanization: "tàiyáng", translation: "Sun" },
    Phrase { id: "P74", text: "大海", romanization: "dàhǎi", translation: "the sea" },
    Phrase { id: "P75", text: "喝奶昔", romanization: "hēnǎixī", translation: "drink milkshake" },
    Phrase { id: "P76", text: "草莓", romanization: "cǎoméi", translation: "Strawberry" },
    Phrase { id: "P77", text: "貝殼", romanization: "bèiké", translation: "shell" },
    Phrase { id: "P78", text: "水族箱", romanization: "shuǐzúxiāng", translation: "aquarium" },
    Phrase { id: "P79", text: "帽子", romanization: "màozi", translation: "hat" },
    Phrase { id: "P80", text: "麵包", romanization: "miànbāo", translation: "bread" },
    Phrase { id: "P81", text: "一條魚", romanization: "yītiáoyú", translation: "a fish" },
    Phrase { id: "P82", text: "鈕扣", romanization: "niǔkòu", translation: "button" },
    Phrase { id: "P83", text: "枕頭", romanization: "zhěntou", translation: "Pillow" },
    Phrase { id: "P84", text: "中秋節", romanization: "zhōngqiūjié", translation: "Mid-Autumn Festival" },
    Phrase { id: "P85", text: "漢堡", romanization: "hànbǎo", translation: "hamburger" },
    Phrase { id: "P86", text: "電腦", romanization: "diànnǎo", translation: "computer" },
    Phrase { id: "P87", text: "看電視", romanization: "kàndiànshì", translation: "watch TV" },
    Phrase { id: "P88", text: "信封", romanization: "xìnfēng", translation: "envelope" },
    Phrase { id: "P89", text: "鋼琴", romanization: "gāngqín", translation: "piano" },
    Phrase { id: "P90", text: "吃點心", romanization: "chīdiǎnxīn", translation: "eat dessert" },
    Phrase { id: "P91", text: "螃蟹", romanization: "pángxiè", translation: "Crab" },
    Phrase { id: "P92", text: "果醬", romanization: "guǒjiàng", translation: "jam" },
    Phrase { id: "P93", text: "口香糖", romanization: "kǒuxiāngtáng", translation: "chewing gum" },
    Phrase { id: "P94", text: "鳳梨", romanization: "fènglí", translation: "pineapple" },
    Phrase { id: "P95", text: "奶瓶", romanization: "nǎipíng", translation: "baby bottle" },
    Phrase { id: "P96", text: "蓮蓬頭", romanization: "liánpengtóu", translation: "shower head" },
];

pub fn phrase(id: &str) -> Option<&'static Phrase> {
    PHRASES.iter().find(|p| p.id == id)
}

pub fn is_known_phrase(id: &str) -> bool {
    phrase(id).is_some()
}
