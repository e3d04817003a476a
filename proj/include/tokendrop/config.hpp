#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tokendrop {

// Flat `key = value` configuration with a typed key registry. Unknown keys
// and malformed values are hard errors; flags override file entries.
class Config {
  public:
    enum class Type { Int, Double, Bool, String };

    static Config defaults();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    void set_assignment(const std::string& key_eq_value);  // "key=value"

    int geti(const std::string& key) const;
    std::uint64_t getu64(const std::string& key) const;
    double getd(const std::string& key) const;
    bool getb(const std::string& key) const;
    const std::string& gets(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;  // comma separated

    // Sorted `key = value` lines, one per key.
    std::string dump() const;

  private:
    struct Entry {
        Type type;
        std::string value;
        const char* help;
    };
    void register_key(const std::string& key, Type t, const std::string& def, const char* help);
    const Entry& entry(const std::string& key) const;

    std::map<std::string, Entry> entries_;
};

}  // namespace tokendrop
