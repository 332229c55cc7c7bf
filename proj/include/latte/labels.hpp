#pragma once

#include <array>
#include <string_view>

namespace latte {

// 100 ImageNet class names. No name's token set is contained in another
// name's token set, and no name uses a word of the command grammar.
inline constexpr std::array<std::string_view, 100> kObjectLabels = {
    "sock",           "paintbrush",      "dial telephone",  "window screen",   "coffee mug",
    "triceratops",    "crawfish",        "tabby",           "bassinet",        "Lycaon pictus",
    "turnstile",      "acorn squash",    "passenger car",   "kite",            "swimming trunks",
    "ambulance",      "hair drier",      "water jug",       "tiger cat",       "sports car",
    "ski",            "vine snake",      "Panthera tigris", "table lamp",      "goldfish",
    "great white shark", "hammerhead",   "ostrich",         "bald eagle",      "tree frog",
    "loggerhead",     "green mamba",     "scorpion",        "tarantula",       "peacock",
    "flamingo",       "pelican",         "king penguin",    "koala",           "jellyfish",
    "sea anemone",    "hermit crab",     "golden retriever", "dalmatian",      "pug",
    "timber wolf",    "red fox",         "persian cat",     "ladybug",         "monarch",
    "zebra",          "hippopotamus",    "bison",           "gazelle",         "orangutan",
    "gorilla",        "chimpanzee",      "giant panda",     "accordion",       "acoustic guitar",
    "airliner",       "analog clock",    "backpack",        "banjo",           "barbell",
    "barrel",         "basketball",      "bathtub",         "beer bottle",     "binoculars",
    "birdhouse",      "bookcase",        "broom",           "bucket",          "candle",
    "cannon",         "canoe",           "cash machine",    "chain saw",       "cowboy hat",
    "crib",           "dishwasher",      "drum",            "dumbbell",        "electric fan",
    "envelope",       "fire engine",     "football helmet", "frying pan",      "golf ball",
    "grand piano",    "harmonica",       "hourglass",       "laptop",          "mailbox",
    "teapot",         "toaster",         "umbrella",        "pineapple",       "mushroom",
};

}  // namespace latte
