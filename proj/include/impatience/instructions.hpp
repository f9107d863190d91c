#pragma once

// Display strings served to the task front-end. The engine never renders text;
// the UI fetches these and substitutes {placeholders}.

#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

namespace impatience {

inline const std::map<std::string, std::map<std::string, std::string>>& instruction_catalog() {
    static const std::map<std::string, std::map<std::string, std::string>> catalog = {
        {"en",
         {
             {"magnitude.intro",
              "In this study, you will be asked to indicate your subjective feeling of durations between today and "
              "many days in the future. The days vary between 3 and 36 months. Please, read the instructions carefully "
              "and indicate your answer."},
             {"magnitude.prompt",
              "Imagine the time interval below. Move the bar to indicate how long you consider the duration between "
              "today and the given interval."},
             {"magnitude.interval", "{n} months"},
             {"magnitude.label_left", "very short"},
             {"magnitude.label_right", "very long"},
             {"choice.intro",
              "Imagine that you will receive different amounts of money at two different times. You can choose only one "
              "of the alternatives."},
             {"choice.now", "{amount} TL now"},
             {"choice.later", "{amount} TL in {n} months"},
             {"choice.break", "Take a short break. The task continues in about 10 seconds."},
             {"done", "Thank you. This part of the study is complete."},
         }},
        {"tr",
         {
             {"magnitude.intro",
              "Lütfen talimatları dikkatlice okuyun ve cevabınızı belirtin. Zaman aralıkları 3 ve 36 ay arasında "
              "değişecektir. Bu deneyde sizden bugün ve uzak gelecekteki günler arasında geçen süreye ilişkin öznel "
              "hislerinizi belirtmeniz istenecektir."},
             {"magnitude.prompt",
              "Aşağıdaki zaman aralığını düşünün. Bugün ile verilen aralık arasındaki sürenin gözünüzde ne kadar "
              "olduğunu göstermek için çubuğu hareket ettirin."},
             {"magnitude.interval", "{n} Ay"},
             {"magnitude.label_left", "çok kısa"},
             {"magnitude.label_right", "çok uzun"},
         }},
    };
    return catalog;
}

// Strings for lang with English fallback for keys the language lacks. Unknown languages get English.
inline nlohmann::json instructions(std::string_view lang) {
    const auto& cat = instruction_catalog();
    const auto& en = cat.at("en");
    nlohmann::json out = {{"lang", "en"}, {"strings", nlohmann::json::object()}};
    const auto it = cat.find(std::string(lang));
    const auto* local = it == cat.end() ? nullptr : &it->second;
    if (local) out["lang"] = it->first;
    for (const auto& [key, text] : en) {
        const bool have = local && local->count(key);
        out["strings"][key] = have ? local->at(key) : text;
        if (local && !have) out["fallback"].push_back(key);
    }
    return out;
}

} // namespace impatience
